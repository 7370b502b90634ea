"""Experiment runner: dispatch, deterministic work units, CSV/SVG output, manifest.

Every unit of work is a ``(point, episode)`` pair whose randomness comes
from ``make_rng(seed, point, episode, phase)``. Units run on a thread pool
and results are reduced in submission order, so the outputs do not depend
on the thread count.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .. import __version__, lowerbound as lb
from ..exceptions import ConfigError, CtlqrError
from ..io import rows_to_csv
from ..lsde import ContinuousSystem, NoiseModel, discretize, make_rng, simulate_batch, simulate_dithered_feedback
from ..matexp import stability_margin
from ..online import OnlineConfig, fixed_stabilizer_regret, optimal_controller, records_to_csv, run_episode
from ..riccati import LqrWeights, expected_cost_finite
from ..sysid import MultiTrajectoryBatch, identify_multi, identify_single
from ..systems import auto_stabilizer, random_stable, uniform_matrix
from .config import ExperimentConfig
from .svg import render_svg_lineplot

__all__ = ["RunManifest", "Failure", "run", "build_system", "resolve_h", "loglog_slope"]

# phase keys; 0 and 1 are used inside the online episode
_PHASE_DATA = 0
_PHASE_SYSTEM = 2
_PHASE_MC = 3


@dataclass
class Failure:
    point: int
    episode: int
    kind: str
    message: str


@dataclass
class RunManifest:
    experiment: str
    config_sha256: str
    version: str
    seed: int
    threads: int
    wall_clock_s: float
    files: dict = field(default_factory=dict)
    failures: List[Failure] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def build_system(cfg: ExperimentConfig, rng: np.random.Generator):
    """``(system, K, weights)`` from the config; ``K`` is verified stabilizing."""
    d = cfg.system["d"]
    rule = cfg.system["A"]
    if rule == "uniform":
        A = uniform_matrix(rng, d)
    elif rule == "stable":
        A = random_stable(rng, d, cfg.system["stable_margin"])
    else:
        A = np.asarray(rule, dtype=float)
    B = cfg.matrix("B")
    sys = ContinuousSystem(A, B)
    try:
        weights = LqrWeights(cfg.matrix("Q"), cfg.matrix("R"))
    except CtlqrError as exc:
        raise ConfigError(str(exc), "$.system") from None
    if cfg.system["K"] == "auto":
        K = auto_stabilizer(A, B, cfg.system["stable_margin"])
    else:
        K = cfg.matrix("K")
    if not stability_margin(A + B @ K) < 0:
        raise ConfigError("K does not stabilize A + B K", "$.system.K")
    return sys, K, weights


def resolve_h(cfg: ExperimentConfig, sys: ContinuousSystem, K) -> float:
    if cfg.h != "auto":
        return float(cfg.h)
    kappa = np.linalg.norm(sys.A, 2) + np.linalg.norm(sys.B, 2) * np.linalg.norm(K, 2)
    return 1.0 / (15.0 * kappa)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]):
    """Least-squares ``(slope, intercept)`` of ``log y`` against ``log x`` over finite positive points."""
    pts = [(math.log(x), math.log(y)) for x, y in zip(xs, ys) if x > 0 and y > 0 and math.isfinite(y)]
    if len(pts) < 2:
        return math.nan, math.nan
    lx, ly = np.array(pts).T
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def _pool_map(fn: Callable, units: list, threads: int) -> list:
    """Apply ``fn`` to ``units``; CtlqrError is captured as a Failure, results keep unit order."""
    def guarded(u):
        try:
            return fn(*u)
        except CtlqrError as exc:
            return Failure(u[0], u[1], type(exc).__name__, str(exc))

    if threads <= 1:
        return [guarded(u) for u in units]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(guarded, units))


def _mean_se(values) -> tuple:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


# ---- experiments ----------------------------------------------------------

def _sysid_errors(est, sys):
    return (
        float(np.linalg.norm(est.Ahat - sys.A, "fro")),
        float(np.linalg.norm(est.Bhat - sys.B, "fro")),
    )


def _run_sysid(cfg: ExperimentConfig, threads: int, multi: bool):
    # systems are shared across grid points so the rate fit compares like with like
    systems = [build_system(cfg, make_rng(cfg.seed, 0, j, _PHASE_SYSTEM)) for j in range(cfg.episodes)]
    noise = NoiseModel(cfg.sigma, cfg.seed)
    grid = cfg.H_grid if multi else cfg.T_grid

    def unit(i, j):
        sys, K, _ = systems[j]
        h = resolve_h(cfg, sys, np.zeros_like(K))
        rng = make_rng(cfg.seed, i, j, _PHASE_DATA)
        if multi:
            states, actions = simulate_batch(discretize(sys, h), int(grid[i]), cfg.T0, noise, rng)
            est = identify_multi(MultiTrajectoryBatch(h, states, actions))
        else:
            n = int(round(grid[i] / h))
            traj = simulate_dithered_feedback(sys, np.zeros((sys.p, sys.d)), n, h, noise, rng)
            est = identify_single(traj)
        return _sysid_errors(est, sys)

    units = [(i, j) for i in range(len(grid)) for j in range(cfg.episodes)]
    results = _pool_map(unit, units, threads)

    key = "H" if multi else "T"
    name = "sysid_multi" if multi else "sysid_single"
    summary_rows, point_rows, failures = [], [], []
    medA, medB = [], []
    for i, g in enumerate(grid):
        res = results[i * cfg.episodes:(i + 1) * cfg.episodes]
        ok = [r for r in res if not isinstance(r, Failure)]
        for j, r in enumerate(res):
            if isinstance(r, Failure):
                failures.append(r)
                point_rows.append((g, j, math.nan, math.nan, r.kind))
            else:
                point_rows.append((g, j, r[0], r[1], "ok"))
        eA = [r[0] ** 2 for r in ok]
        eB = [r[1] ** 2 for r in ok]
        mA, se = _mean_se(eA)
        mB, _ = _mean_se(eB)
        summary_rows.append((g, mA, mB, se))
        medA.append(float(np.median([r[0] for r in ok])) if ok else math.nan)
        medB.append(float(np.median([r[1] for r in ok])) if ok else math.nan)

    slope_rows = []
    for metric, ys in (
        ("mean_errA_F2", [r[1] for r in summary_rows]),
        ("mean_errB_F2", [r[2] for r in summary_rows]),
        ("median_errA_F", medA),
        ("median_errB_F", medB),
    ):
        s, c = loglog_slope(grid, ys)
        slope_rows.append((metric, s, c))

    files = {
        f"{name}.csv": rows_to_csv([key, "mean_errA_F2", "mean_errB_F2", "se"], summary_rows),
        f"{name}_points.csv": rows_to_csv([key, "system", "errA_F", "errB_F", "status"], point_rows),
        f"{name}_slope.csv": rows_to_csv(["metric", "slope", "intercept"], slope_rows),
    }
    svgs = {
        f"{name}.svg": (
            [("E||A_hat - A||_F^2", grid, [r[1] for r in summary_rows]),
             ("E||B_hat - B||_F^2", grid, [r[2] for r in summary_rows])],
            key, "squared Frobenius error", True, True,
        )
    }
    summary = {m: s for m, s, _ in slope_rows}
    return files, svgs, failures, summary


def _run_online(cfg: ExperimentConfig, threads: int):
    sys, K, weights = build_system(cfg, make_rng(cfg.seed, 0, 0, _PHASE_SYSTEM))
    h = resolve_h(cfg, sys, K)
    _, K_star = optimal_controller(sys, weights, K)
    x0 = np.zeros(sys.d)
    T_grid = cfg.T_grid
    JT_star = [expected_cost_finite(sys, weights, K_star, x0, T, sigma=cfg.sigma) for T in T_grid]
    cfgs = [
        OnlineConfig(T=T, h=h, K=K, weights=weights, seed=cfg.seed, n_episodes=cfg.episodes, sigma=cfg.sigma, point=i)
        for i, T in enumerate(T_grid)
    ]

    def unit(i, j):
        return run_episode(sys, cfgs[i], j, K_star, JT_star[i])

    units = [(i, j) for i in range(len(T_grid)) for j in range(cfg.episodes)]
    results = _pool_map(unit, units, threads)

    files, failures, rows, base_rows = {}, [], [], []
    for i, T in enumerate(T_grid):
        res = results[i * cfg.episodes:(i + 1) * cfg.episodes]
        failures += [r for r in res if isinstance(r, Failure)]
        recs = [r for r in res if not isinstance(r, Failure)]
        m, se = _mean_se([r.RT / math.sqrt(T) for r in recs])
        rows.append((T, m, se))
        base = fixed_stabilizer_regret(sys, weights, K, K_star, x0, T, sigma=cfg.sigma)
        base_rows.append((T, base / math.sqrt(T)))
        files[f"online_records_T{_tag(T)}.csv"] = records_to_csv(recs)
    files["online_regret.csv"] = rows_to_csv(["T", "mean_RT_norm", "se"], rows)
    files["online_baseline.csv"] = rows_to_csv(["T", "RT_norm_fixed_stabilizer"], base_rows)
    svgs = {
        "online_regret.svg": (
            [("explore-then-commit", T_grid, [r[1] for r in rows]),
             ("fixed stabilizer (substitute baseline)", T_grid, [r[1] for r in base_rows])],
            "T", "R(T) / sqrt(T)", False, False,
        )
    }
    summary = {
        "h": h,
        "mean_RT_norm": [r[1] for r in rows],
        "baseline_RT_norm": [r[1] for r in base_rows],
    }
    return files, svgs, failures, summary


_ESTIMATORS = {
    "ml": lambda T, delta: lb.ml_plugin,
    "single-gap": lambda T, delta: lb.single_gap,
    "constant-base": lambda T, delta: lb.constant(-1.0),
    "constant-mid": lambda T, delta: lb.constant(-1.0 - delta / 2),
}


def _run_lowerbound(cfg: ExperimentConfig, threads: int):
    opts = cfg.lowerbound
    T_grid = cfg.T_grid

    def kl_unit(i, j):
        T = T_grid[i]
        delta = lb.critical_delta(T)
        N = opts["N_grid"][j]
        grid = lb.uniform_grid(T, N)
        kl = lb.kl_exact(grid, delta)
        mc = se = None
        if N == opts["mc_N"]:
            mc, se = lb.kl_monte_carlo(grid, delta, opts["mc_paths"], make_rng(cfg.seed, i, j, _PHASE_MC))
        return (N, T, delta, kl, mc, se)

    units = [(i, j) for i in range(len(T_grid)) for j in range(len(opts["N_grid"]))]
    kl_rows = _pool_map(kl_unit, units, threads)

    T_r = opts["risk_T"]
    delta_r = lb.critical_delta(T_r)
    grid_r = lb.uniform_grid(T_r, opts["risk_N"])

    def risk_unit(e, _):
        name = opts["estimators"][e]
        return lb.estimator_risk(grid_r, T_r, _ESTIMATORS[name](T_r, delta_r), opts["trials"], seed=cfg.seed, name=name)

    risks = _pool_map(risk_unit, [(e, 0) for e in range(len(opts["estimators"]))], threads)

    failures = [r for r in kl_rows + risks if isinstance(r, Failure)]
    kl_rows = [r for r in kl_rows if not isinstance(r, Failure)]
    risks = [r for r in risks if not isinstance(r, Failure)]
    files = {
        "lowerbound_kl.csv": lb.kl_rows_to_csv(kl_rows),
        "lowerbound_risk.csv": lb.risk_rows_to_csv(risks),
    }
    series = []
    for T in T_grid:
        pts = [(r[0], r[3]) for r in kl_rows if r[1] == T]
        if len(pts) >= 2:
            series.append((f"T={T:g}", [p[0] for p in pts], [p[1] for p in pts]))
    svgs = {}
    if series:
        svgs["lowerbound_kl.svg"] = (series, "N (observations)", "KL divergence", True, False)
    summary = {
        "kl_max": max((r[3] for r in kl_rows), default=math.nan),
        "risk_floor": lb.RISK_FLOOR,
        "risk_max": {r.name: r.p_err_max for r in risks},
    }
    return files, svgs, failures, summary


def _plottable(series, logx: bool, logy: bool) -> int:
    _, xs, ys = series
    return sum(
        1
        for x, y in zip(xs, ys)
        if math.isfinite(x) and math.isfinite(y) and (not logx or x > 0) and (not logy or y > 0)
    )


def _tag(T: float) -> str:
    return str(int(T)) if float(T).is_integer() else repr(float(T)).replace(".", "p")


_DISPATCH = {
    "sysid-single": lambda c, t: _run_sysid(c, t, multi=False),
    "sysid-multi": lambda c, t: _run_sysid(c, t, multi=True),
    "online-regret": _run_online,
    "lowerbound": _run_lowerbound,
}


def run(cfg: ExperimentConfig, out_dir=None, seed: Optional[int] = None, threads: Optional[int] = None) -> RunManifest:
    """Run the configured experiment and write its CSV/SVG outputs and ``manifest.json``.

    ``out_dir``, ``seed`` and ``threads`` override the config. Units that
    raise a ctlqr error are listed in ``manifest.failures``; the other
    units and points still run.
    """
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    threads = cfg.threads if threads is None else int(threads)
    if threads < 1:
        raise ConfigError("threads must be >= 1", "$.threads")
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files, svgs, failures, summary = _DISPATCH[cfg.experiment](cfg, threads)
    for name, (series, xl, yl, logx, logy) in svgs.items():
        # points lost to failed units are already in the manifest; plot what is left
        series = [s for s in series if _plottable(s, logx, logy) >= 2]
        if series:
            files[name] = render_svg_lineplot(series, xl, yl, logx=logx, logy=logy)
    files["config.json"] = cfg.canonical_json()
    checksums = {}
    for name in sorted(files):
        data = files[name].encode()
        (out / name).write_bytes(data)
        checksums[name] = hashlib.sha256(data).hexdigest()
    manifest = RunManifest(
        experiment=cfg.experiment,
        config_sha256=cfg.sha256(),
        version=__version__,
        seed=cfg.seed,
        threads=threads,
        wall_clock_s=time.perf_counter() - t0,
        files=checksums,
        failures=failures,
        summary=summary,
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest
