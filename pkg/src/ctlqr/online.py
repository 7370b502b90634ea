"""Explore-then-commit online LQR with divergence safeguards.

The exploration phase runs for ``floor(sqrt(T) / h)`` intervals under
``U = K X + u_k`` with the known stabilizer ``K`` and Gaussian dither.
The closed loop ``(A + B K, B)`` is identified and un-mixed into
``Ahat = Abar - Bbar K``. A Riccati gain is synthesized when the
estimated loops are stable and ``||P|| < T^(1/5)``; otherwise the
controller falls back to ``K``. The exploitation phase runs that gain to time ``T`` and reverts to
``K`` for good once a grid state reaches norm ``T^(1/5)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matexp
from ._validation import check_matrix, check_positive
from .exceptions import CtlqrError, InvalidArgumentError
from .io import rows_to_csv
from .lsde import (
    ContinuousSystem,
    NoiseModel,
    SampledTrajectory,
    make_rng,
    simulate_dithered_feedback,
    simulate_feedback_guarded,
)
from .riccati import LqrWeights, expected_cost_finite, optimal_gain, solve_care
from .sysid import estimate_discrete_single, recover_continuous
from .systems import auto_stabilizer

__all__ = [
    "OnlineConfig",
    "RegretRecord",
    "SynthesisResult",
    "divergence_threshold",
    "exploration_steps",
    "explore",
    "synthesize",
    "synthesize_from_estimates",
    "exploit",
    "run_episode",
    "optimal_controller",
    "fixed_stabilizer_regret",
    "records_to_csv",
]

STABLE_MARGIN = 1e-9

# RNG phase keys within one episode stream.
_PHASE_EXPLORE = 0
_PHASE_EXPLOIT = 1


def divergence_threshold(T: float) -> float:
    return float(T) ** 0.2


def exploration_steps(T: float, h: float) -> int:
    return int(math.floor(math.sqrt(T) / h + 1e-9))


@dataclass
class OnlineConfig:
    T: float
    h: float
    K: np.ndarray
    weights: LqrWeights
    kappa: Optional[float] = None
    seed: int = 0
    n_episodes: int = 1
    sigma: float = 1.0
    x0: Optional[np.ndarray] = None
    point: int = 0
    stability_check: str = "closed-loop"
    dither: float = 1.0

    def __post_init__(self):
        self.T = check_positive(self.T, "T")
        self.h = check_positive(self.h, "h")
        if self.T < 1:
            raise InvalidArgumentError("T must be >= 1")
        self.K = check_matrix(self.K, "K")
        if self.sigma < 0:
            raise InvalidArgumentError("sigma must be >= 0")
        if not (self.dither >= 0 and math.isfinite(self.dither)):
            raise InvalidArgumentError("dither must be finite and >= 0")
        if self.n_explore < sum(self.K.shape):
            raise InvalidArgumentError(
                f"exploration has {self.n_explore} steps, fewer than d + p = {sum(self.K.shape)}"
            )
        if self.stability_check not in ("closed-loop", "literal"):
            raise InvalidArgumentError(f"unknown stability_check {self.stability_check!r}")

    @classmethod
    def with_kappa(cls, sys: ContinuousSystem, K, weights: LqrWeights, T: float, **kw) -> "OnlineConfig":
        """Step ``h = 1 / (15 kappa)`` with ``kappa = ||A|| + ||B|| ||K||``."""
        K = check_matrix(K, "K", rows=sys.p, cols=sys.d)
        kappa = np.linalg.norm(sys.A, 2) + np.linalg.norm(sys.B, 2) * np.linalg.norm(K, 2)
        return cls(T=T, h=1.0 / (15.0 * kappa), K=K, weights=weights, kappa=float(kappa), **kw)

    @property
    def n_explore(self) -> int:
        return exploration_steps(self.T, self.h)

    @property
    def n_total(self) -> int:
        return int(round(self.T / self.h))

    @property
    def threshold(self) -> float:
        return divergence_threshold(self.T)

    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma, self.seed)


@dataclass
class SynthesisResult:
    K_bar: np.ndarray
    unstable_Ahat: bool = False
    P_norm_capped: bool = False
    failed: Optional[str] = None
    Ahat: Optional[np.ndarray] = None
    Bhat: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None

    @property
    def used_fallback(self) -> bool:
        return self.unstable_Ahat or self.P_norm_capped or self.failed is not None


@dataclass
class RegretRecord:
    episode: int
    T: float
    JT: float
    JT_star: float
    K_bar: np.ndarray
    unstable_Ahat: bool = False
    P_norm_capped: bool = False
    divergence_triggered: bool = False
    synthesis_failed: Optional[str] = None
    explore_cost: float = 0.0
    exploit_cost: float = 0.0

    @property
    def RT(self) -> float:
        return self.JT - self.JT_star


def _trapezoid_cost(traj: SampledTrajectory, Q, R, gains, dither=None) -> float:
    """Trapezoid rule for ``int X^T Q X + U^T R U`` over the grid.

    On interval ``k`` the input is ``gains[k] @ X_t (+ dither[k])``, which
    is exact at both interval endpoints.
    """
    X = traj.states
    x0, x1 = X[:-1], X[1:]
    u0 = np.einsum("kij,kj->ki", gains, x0)
    u1 = np.einsum("kij,kj->ki", gains, x1)
    if dither is not None:
        u0 = u0 + dither
        u1 = u1 + dither
    q = lambda Z, W: np.einsum("ki,ij,kj->k", Z, W, Z)
    c = q(x0, Q) + q(x1, Q) + q(u0, R) + q(u1, R)
    return float(0.5 * traj.h * c.sum())


def explore(sys: ContinuousSystem, cfg: OnlineConfig, rng=None):
    """Exploration phase; returns the trajectory (actions = dither) and its pathwise cost."""
    if rng is None:
        rng = make_rng(cfg.seed, cfg.point, 0, _PHASE_EXPLORE)
    n = cfg.n_explore
    x0 = np.zeros(sys.d) if cfg.x0 is None else cfg.x0
    traj = simulate_dithered_feedback(sys, cfg.K, n, cfg.h, cfg.noise(), rng, x0=x0, dither_scale=cfg.dither)
    gains = np.broadcast_to(cfg.K, (n,) + cfg.K.shape)
    cost = _trapezoid_cost(traj, cfg.weights.Q, cfg.weights.R, gains, traj.actions)
    return traj, cost


def synthesize_from_estimates(Ahat, Bhat, cfg: OnlineConfig, P_override=None) -> SynthesisResult:
    """Controller choice given continuous estimates of ``(A, B)``.

    With ``cfg.stability_check == "closed-loop"`` (default) the estimates
    are rejected unless the estimated loop under the known stabilizer,
    ``Ahat + Bhat K``, is stable, and the synthesized gain must stabilize
    ``Ahat + Bhat Kbar``. ``"literal"`` instead requires ``Ahat`` itself to
    be stable, which rejects every open-loop unstable plant. A failed check
    sets ``unstable_Ahat``. ``P_override`` replaces the Riccati solve; it
    exists to exercise the norm cap directly.
    """
    K = cfg.K
    Ahat = np.asarray(Ahat, dtype=float)
    Bhat = np.asarray(Bhat, dtype=float)
    fallback = lambda **kw: SynthesisResult(K.copy(), Ahat=Ahat, Bhat=Bhat, **kw)
    if not (np.all(np.isfinite(Ahat)) and np.all(np.isfinite(Bhat))):
        return fallback(failed="non-finite estimates")
    if cfg.stability_check == "literal":
        if not matexp.stability_margin(Ahat) < -STABLE_MARGIN:
            return fallback(unstable_Ahat=True)
    elif not matexp.stability_margin(Ahat + Bhat @ K) < -STABLE_MARGIN:
        return fallback(unstable_Ahat=True)

    if P_override is not None:
        P = np.asarray(P_override, dtype=float)
    else:
        P, err = None, None
        for K0 in _care_starts(Ahat, Bhat, K):
            try:
                P = solve_care(Ahat, Bhat, cfg.weights, K0=K0).P
                break
            except CtlqrError as exc:
                err = exc
        if P is None:
            return fallback(failed=f"riccati: {err}")
    if np.linalg.norm(P, 2) >= cfg.threshold:
        return fallback(P_norm_capped=True, P=P)
    K_bar = optimal_gain(P, Bhat, cfg.weights)
    if not matexp.stability_margin(Ahat + Bhat @ K_bar) < -STABLE_MARGIN:
        return fallback(unstable_Ahat=True, P=P)
    return SynthesisResult(K_bar, Ahat=Ahat, Bhat=Bhat, P=P)


def _care_starts(Ahat, Bhat, K):
    if matexp.stability_margin(Ahat + Bhat @ K) < -STABLE_MARGIN:
        yield K
    try:
        yield auto_stabilizer(Ahat, Bhat)
    except (CtlqrError, ValueError, np.linalg.LinAlgError):
        return


def synthesize(traj: SampledTrajectory, cfg: OnlineConfig) -> SynthesisResult:
    """Identify the dithered closed loop, un-mix, and choose the exploitation gain."""
    try:
        Atilde, Btilde, _ = estimate_discrete_single(traj)
        Abar, Bbar = recover_continuous(Atilde, Btilde, traj.h)
    except CtlqrError as exc:
        return SynthesisResult(cfg.K.copy(), failed=f"identification: {exc}")
    Ahat = Abar - Bbar @ cfg.K
    return synthesize_from_estimates(Ahat, Bbar, cfg)


def exploit(sys: ContinuousSystem, K_bar, cfg: OnlineConfig, x_start, rng=None):
    """Guarded exploitation from the end of exploration to ``T``; returns (trajectory, cost)."""
    if rng is None:
        rng = make_rng(cfg.seed, cfg.point, 0, _PHASE_EXPLOIT)
    n = cfg.n_total - cfg.n_explore
    if n < 1:
        raise InvalidArgumentError("no time left for exploitation")
    traj = simulate_feedback_guarded(
        sys, K_bar, cfg.K, x_start, n, cfg.h, cfg.threshold, cfg.noise(), rng
    )
    gains = np.empty((n,) + cfg.K.shape)
    j = n if traj.event is None else traj.event.index
    gains[:j] = K_bar
    gains[j:] = cfg.K
    cost = _trapezoid_cost(traj, cfg.weights.Q, cfg.weights.R, gains)
    return traj, cost


def optimal_controller(sys: ContinuousSystem, weights: LqrWeights, K0):
    """``(P*, K*)`` of the true system; a failure here is a test-setup error and propagates."""
    sol = solve_care(sys.A, sys.B, weights, K0=K0)
    return sol.P, optimal_gain(sol.P, sys.B, weights)


def run_episode(sys: ContinuousSystem, cfg: OnlineConfig, episode: int, K_star=None, JT_star=None) -> RegretRecord:
    """One explore/synthesize/exploit run; deterministic in ``(cfg.seed, cfg.point, episode)``."""
    if K_star is None:
        _, K_star = optimal_controller(sys, cfg.weights, cfg.K)
    x0 = np.zeros(sys.d) if cfg.x0 is None else cfg.x0
    if JT_star is None:
        JT_star = expected_cost_finite(sys, cfg.weights, K_star, x0, cfg.T, sigma=cfg.sigma)
    rng_explore = make_rng(cfg.seed, cfg.point, episode, _PHASE_EXPLORE)
    rng_exploit = make_rng(cfg.seed, cfg.point, episode, _PHASE_EXPLOIT)
    traj_e, cost_e = explore(sys, cfg, rng_explore)
    syn = synthesize(traj_e, cfg)
    traj_x, cost_x = exploit(sys, syn.K_bar, cfg, traj_e.states[-1], rng_exploit)
    return RegretRecord(
        episode=episode,
        T=cfg.T,
        JT=cost_e + cost_x,
        JT_star=float(JT_star),
        K_bar=syn.K_bar,
        unstable_Ahat=syn.unstable_Ahat,
        P_norm_capped=syn.P_norm_capped,
        divergence_triggered=traj_x.event is not None,
        synthesis_failed=syn.failed,
        explore_cost=cost_e,
        exploit_cost=cost_x,
    )


def fixed_stabilizer_regret(
    sys: ContinuousSystem, weights: LqrWeights, K, K_star, x0, T: float, sigma: float = 1.0
) -> float:
    """Expected regret of running the known stabilizer ``K`` over the whole horizon.

    This naive policy is the comparison baseline for the online controller.
    """
    return expected_cost_finite(sys, weights, K, x0, T, sigma=sigma) - expected_cost_finite(
        sys, weights, K_star, x0, T, sigma=sigma
    )


def records_to_csv(records) -> str:
    return rows_to_csv(
        ["episode", "T", "JT", "JTstar", "RT", "flag_unstable", "flag_pcap", "flag_div"],
        [
            (r.episode, float(r.T), r.JT, r.JT_star, r.RT, r.unstable_Ahat, r.P_norm_capped, r.divergence_triggered)
            for r in records
        ],
    )
