"""Two-point lower-bound laboratory for drift estimation from sampled OU paths.

The hypotheses are the scalar processes ``dX = -X dt + dW`` (base) and
``dX = -(1 + delta) X dt + dW`` (alt), started at zero and observed on a
grid ``0 = t_0 < ... < t_N = T``. With ``delta = 1 / (5 sqrt(T))`` their
KL divergence stays below ``3 delta^2 T = 3/25`` however fine the grid,
so no estimator can resolve the drift to ``1 / (10 sqrt(T))`` with
vanishing error under both hypotheses.

Estimators map observed paths to an estimate of the drift coefficient
(``-1`` under base, ``-1 - delta`` under alt). They take ``(times, xs)``
with ``xs`` of shape ``(n_paths, N + 1)`` and return one value per path;
wrap a per-path function with :func:`pathwise`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, signal, stats

from .exceptions import InvalidArgumentError
from .io import rows_to_csv
from .lsde import make_rng

__all__ = [
    "critical_delta",
    "uniform_grid",
    "check_grid",
    "gamma",
    "log_density_ratio",
    "kl_exact",
    "kl_monte_carlo",
    "simulate_observed",
    "ml_plugin",
    "single_gap",
    "constant",
    "pathwise",
    "RiskResult",
    "estimator_risk",
    "RISK_FLOOR",
    "kl_rows_to_csv",
    "risk_rows_to_csv",
]

RISK_FLOOR = 1.0 / (4.0 * math.e**3)

Estimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def critical_delta(T: float) -> float:
    return 1.0 / (5.0 * math.sqrt(T))


def uniform_grid(T: float, N: int) -> np.ndarray:
    if not (T > 0 and math.isfinite(T)):
        raise InvalidArgumentError("T must be positive and finite")
    if int(N) < 1:
        raise InvalidArgumentError("N must be >= 1")
    return np.linspace(0.0, float(T), int(N) + 1)


def check_grid(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise InvalidArgumentError("grid needs at least two time points")
    if not np.all(np.isfinite(t)):
        raise InvalidArgumentError("grid times must be finite")
    if t[0] != 0.0:
        raise InvalidArgumentError("grid must start at t=0")
    if np.any(np.diff(t) <= 0):
        raise InvalidArgumentError("grid times must be strictly increasing")
    return t


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not (delta >= 0 and math.isfinite(delta)):
        raise InvalidArgumentError("delta must be finite and >= 0")
    return delta


def _rate(variant: str, delta: float) -> float:
    if variant == "base":
        return 1.0
    if variant == "alt":
        return 1.0 + _check_delta(delta)
    raise InvalidArgumentError(f"variant must be 'base' or 'alt', got {variant!r}")


def gamma(t, variant: str = "base", delta: float = 0.0):
    """Transition variance over a gap ``t`` of the base or alt process.

    ``(1 - e^{-2 c t}) / (2 c)`` with ``c = 1`` or ``c = 1 + delta``.
    """
    c = _rate(variant, delta)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidArgumentError("gap must be >= 0")
    out = -np.expm1(-2.0 * c * t) / (2.0 * c)
    return float(out) if out.ndim == 0 else out


def _terms(times: np.ndarray, delta: float):
    """Per-gap ``gamma_i``, ``e^{-dt}`` and ``e^{-dt} - e^{-(1+delta) dt}``."""
    dt = np.diff(times)
    G = gamma(dt, "base")
    Gbar = gamma(dt, "alt", delta)
    decay = np.exp(-dt)
    # e^{-dt} (1 - e^{-delta dt}) without cancellation
    gap = decay * -np.expm1(-delta * dt)
    return dt, G, Gbar, decay, gap


def log_density_ratio(times, xs, delta: float):
    """``ln g(xs) - ln gbar(xs)`` for paths observed on ``times``.

    ``xs`` is one path of length ``N + 1`` or a ``(n_paths, N + 1)``
    array. The sum runs over gaps of
    ``-ln gamma_i + gamma_i^2 (alpha_i + beta_i)^2 / 2 - alpha_i^2 / 2``.
    """
    t = check_grid(times)
    delta = _check_delta(delta)
    X = np.asarray(xs, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != t.size:
        raise InvalidArgumentError(f"paths have {X.shape[1]} points, grid has {t.size}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("observed values must be finite")
    _, G, Gbar, decay, gap = _terms(t, delta)
    prev, nxt = X[:, :-1], X[:, 1:]
    s = 1.0 / np.sqrt(G)
    alpha = s * (nxt - decay * prev)
    beta = s * gap * prev
    g2 = G / Gbar
    val = (-0.5 * np.log(g2) + 0.5 * g2 * (alpha + beta) ** 2 - 0.5 * alpha**2).sum(axis=1)
    return float(val[0]) if single else val


def kl_exact(times, delta: float) -> float:
    """KL divergence of the base law from the alt law on ``times``.

    Sums ``-ln gamma_i + (gamma_i^2 - 1) / 2 + gamma_i^2 E[beta_i^2] / 2``
    where ``E[beta_i^2] = Gamma(t_{i-1}) gap_i^2 / Gamma(dt_i)`` for a path
    started at zero.
    """
    t = check_grid(times)
    delta = _check_delta(delta)
    if delta == 0.0:
        return 0.0
    _, G, Gbar, _, gap = _terms(t, delta)
    g2 = G / Gbar
    Ebeta2 = gamma(t[:-1]) * gap**2 / G
    # -ln g + (g^2 - 1)/2 >= 0 by convexity; log1p/expm1 keep it accurate near g = 1
    r = (G - Gbar) / Gbar
    total = (-0.5 * np.log1p(r) + 0.5 * r + 0.5 * g2 * Ebeta2).sum()
    return float(max(total, 0.0))


def simulate_observed(times, variant: str, delta: float, rng: np.random.Generator, n_paths: Optional[int] = None):
    """Exact samples of the base or alt process at ``times``, started at zero.

    Returns a path of length ``N + 1``, or ``(n_paths, N + 1)`` paths.
    """
    t = check_grid(times)
    c = _rate(variant, delta)
    dt = np.diff(t)
    decay = np.exp(-c * dt)
    sd = np.sqrt(gamma(dt, variant, delta))
    m = 1 if n_paths is None else int(n_paths)
    if m < 1:
        raise InvalidArgumentError("n_paths must be >= 1")
    Z = rng.standard_normal((m, dt.size)) * sd
    X = np.zeros((m, t.size))
    if np.all(decay == decay[0]):
        X[:, 1:] = signal.lfilter([1.0], [1.0, -decay[0]], Z, axis=1)
    else:
        for i in range(dt.size):
            X[:, i + 1] = decay[i] * X[:, i] + Z[:, i]
    return X[0] if n_paths is None else X


def kl_monte_carlo(times, delta: float, n_paths: int, rng: np.random.Generator, chunk: int = 20000):
    """Mean and standard error of ``log_density_ratio`` over paths from the base law."""
    t = check_grid(times)
    vals = []
    left = int(n_paths)
    if left < 2:
        raise InvalidArgumentError("need at least two paths")
    while left > 0:
        m = min(chunk, left)
        vals.append(log_density_ratio(t, simulate_observed(t, "base", delta, rng, m), delta))
        left -= m
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


# ---- estimators -----------------------------------------------------------

def _ar1_coefficient(xs: np.ndarray) -> np.ndarray:
    prev, nxt = xs[:, :-1], xs[:, 1:]
    num = (prev * nxt).sum(axis=1)
    den = (prev * prev).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, 0.0)


def _ml_nonuniform(times: np.ndarray, x: np.ndarray) -> float:
    dt = np.diff(times)
    prev, nxt = x[:-1], x[1:]

    def nll(a):
        v = dt if a == 0 else np.expm1(2 * a * dt) / (2 * a)
        r = nxt - np.exp(a * dt) * prev
        return 0.5 * np.sum(np.log(v) + r * r / v)

    return float(optimize.minimize_scalar(nll, bounds=(-50.0, 10.0), method="bounded").x)


def ml_plugin(times, xs) -> np.ndarray:
    """Maximum-likelihood drift estimate from all transitions.

    On a uniform grid this is ``log(phi) / dt`` with ``phi`` the
    least-squares AR(1) coefficient; non-positive ``phi`` is clipped so
    the estimate stays finite. Non-uniform grids maximize the exact
    Gaussian likelihood numerically.
    """
    t = np.asarray(times, dtype=float)
    X = np.atleast_2d(xs)
    dt = np.diff(t)
    if np.allclose(dt, dt[0], rtol=1e-12, atol=0):
        phi = _ar1_coefficient(X)
        return np.log(np.clip(phi, 1e-300, None)) / dt[0]
    return np.array([_ml_nonuniform(t, x) for x in X])


def single_gap(times, xs) -> np.ndarray:
    """Drift estimate from the final observed gap only."""
    t = np.asarray(times, dtype=float)
    X = np.atleast_2d(xs)
    if t.size < 3:
        raise InvalidArgumentError("single-gap estimator needs at least two gaps")
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(X[:, -2] != 0, X[:, -1] / X[:, -2], 0.0)
    return np.log(np.clip(phi, 1e-300, None)) / (t[-1] - t[-2])


def constant(value: float) -> Estimator:
    """Estimator ignoring the data."""
    def est(times, xs):
        return np.full(np.atleast_2d(xs).shape[0], float(value))

    est.__name__ = f"constant({value!r})"
    return est


def pathwise(fn: Callable[[np.ndarray], float]) -> Estimator:
    """Lift ``fn(xs_one_path) -> float`` to the batch estimator interface."""
    def est(times, xs):
        return np.array([float(fn(x)) for x in np.atleast_2d(xs)])

    est.__name__ = getattr(fn, "__name__", "pathwise")
    return est


# ---- risk -----------------------------------------------------------------

@dataclass
class RiskResult:
    name: str
    trials: int
    p_err_base: float
    p_err_alt: float
    ci_base: tuple
    ci_alt: tuple
    radius: float

    @property
    def p_err_max(self) -> float:
        return max(self.p_err_base, self.p_err_alt)

    @property
    def ci_max(self) -> tuple:
        """Wilson interval of the hypothesis attaining the larger error rate."""
        return self.ci_base if self.p_err_base >= self.p_err_alt else self.ci_alt


def _wilson(k: int, n: int, level: float = 0.95) -> tuple:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return (float(ci.low), float(ci.high))


def estimator_risk(
    times,
    T: float,
    estimator: Estimator,
    trials: int,
    delta: Optional[float] = None,
    seed: int = 0,
    radius: Optional[float] = None,
    chunk: int = 1000,
    name: Optional[str] = None,
) -> RiskResult:
    """Error rates of ``estimator`` under both hypotheses.

    An error is ``|estimate - truth| >= radius`` with truth ``-1`` (base)
    or ``-1 - delta`` (alt). Defaults are ``delta = 1 / (5 sqrt(T))`` and
    ``radius = 1 / (10 sqrt(T))``. Trials run in chunks of ``chunk``
    paths; chunk ``j`` of each hypothesis draws from its own stream keyed
    by ``(seed, hypothesis, j)``, so results do not depend on scheduling.
    """
    t = check_grid(times)
    if int(trials) < 100:
        raise InvalidArgumentError("trials must be >= 100")
    if not math.isclose(t[-1], T, rel_tol=1e-12):
        raise InvalidArgumentError("grid must end at T")
    delta = critical_delta(T) if delta is None else _check_delta(delta)
    radius = 1.0 / (10.0 * math.sqrt(T)) if radius is None else float(radius)
    counts = {}
    for h_index, (variant, truth) in enumerate((("base", -1.0), ("alt", -1.0 - delta))):
        k, done, j = 0, 0, 0
        while done < trials:
            m = min(chunk, trials - done)
            xs = simulate_observed(t, variant, delta, make_rng(seed, h_index, j), m)
            est = np.asarray(estimator(t, xs), dtype=float)
            # non-finite estimates count as errors
            k += int(np.sum(~(np.abs(est - truth) < radius)))
            done += m
            j += 1
        counts[variant] = k
    n = int(trials)
    return RiskResult(
        name or getattr(estimator, "__name__", "estimator"),
        n,
        counts["base"] / n,
        counts["alt"] / n,
        _wilson(counts["base"], n),
        _wilson(counts["alt"], n),
        radius,
    )


def kl_rows_to_csv(rows: Sequence[tuple]) -> str:
    """Rows ``(N, T, delta, kl_exact, kl_mc, kl_mc_se)``; missing MC values are blank."""
    out = [tuple("" if v is None else v for v in r) for r in rows]
    return rows_to_csv(["N", "T", "delta", "kl_exact", "kl_mc", "kl_mc_se"], out)


def risk_rows_to_csv(results: Sequence[RiskResult]) -> str:
    return rows_to_csv(
        ["estimator", "trials", "p_err_base", "p_err_alt"],
        [(r.name, r.trials, r.p_err_base, r.p_err_alt) for r in results],
    )
