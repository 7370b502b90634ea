"""Exact simulation of ``dX = A X dt + B U dt + dW`` on a sampling grid.

With piecewise-constant input over each interval of length ``h`` the grid
states obey the discrete recursion

    x_{k+1} = A' x_k + B' u_k + w_k,    w_k ~ N(0, Sigma)

with ``A' = exp(A h)``, ``B' = (int_0^h exp(A s) ds) B`` and
``Sigma = int_0^h exp(A s) exp(A^T s) ds``. There is no discretization
error, so ``sigma = 0`` runs are deterministic and exact.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matexp
from ._validation import check_matrix, check_positive, check_square, check_vector
from .exceptions import InvalidArgumentError

__all__ = [
    "ContinuousSystem",
    "DiscretizedSystem",
    "SampledTrajectory",
    "NoiseModel",
    "Event",
    "make_rng",
    "discretize",
    "step",
    "simulate",
    "simulate_dithered_feedback",
    "simulate_batch",
    "simulate_feedback_guarded",
]

DIVERGENCE = "divergence-threshold"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(seed, *keys)``.

    Streams for distinct key tuples are independent, so parallel work units
    keyed by e.g. ``(point, episode, phase)`` reproduce regardless of
    scheduling order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ContinuousSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = check_square(self.A, "A")
        B = check_matrix(self.B, "B", rows=A.shape[0])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    def closed_loop(self, K) -> "ContinuousSystem":
        """System seen by an extra input when ``U = K X + u`` is applied."""
        K = check_matrix(K, "K", rows=self.p, cols=self.d)
        return ContinuousSystem(self.A + self.B @ K, self.B)


@dataclass(frozen=True)
class DiscretizedSystem:
    h: float
    Aprime: np.ndarray
    Bprime: np.ndarray
    Sigma: np.ndarray
    sigma_chol: np.ndarray

    @property
    def d(self) -> int:
        return self.Aprime.shape[0]

    @property
    def p(self) -> int:
        return self.Bprime.shape[1]


@dataclass(frozen=True)
class Event:
    index: int
    kind: str = DIVERGENCE


@dataclass
class SampledTrajectory:
    """States ``x_0..x_n`` and interval inputs ``u_0..u_{n-1}`` on a grid of step ``h``."""

    h: float
    states: np.ndarray
    actions: np.ndarray
    event: Optional[Event] = None

    def __post_init__(self):
        self.h = check_positive(self.h, "h")
        self.states = check_matrix(self.states, "states")
        self.actions = np.asarray(self.actions, dtype=float)
        if self.actions.ndim == 1 and self.actions.size == 0:
            self.actions = self.actions.reshape(0, 0)
        self.actions = check_matrix(self.actions, "actions")
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise InvalidArgumentError(
                f"need len(states) == len(actions) + 1, got {self.states.shape[0]} "
                f"and {self.actions.shape[0]}"
            )

    @property
    def n_steps(self) -> int:
        return self.actions.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.states.shape[0])

    def to_csv(self) -> str:
        """Header ``k,t,x_0..,u_0..``; action cells are blank on the last row."""
        d = self.states.shape[1]
        p = self.actions.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "t"] + [f"x_{i}" for i in range(d)] + [f"u_{j}" for j in range(p)])
        for k, x in enumerate(self.states):
            u = self.actions[k] if k < self.n_steps else [None] * p
            w.writerow(
                [k, repr(k * self.h)]
                + [repr(float(v)) for v in x]
                + ["" if v is None else repr(float(v)) for v in u]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class NoiseModel:
    """Brownian intensity ``scale`` (1 is standard Brownian motion, 0 disables noise)."""

    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale < 0:
            raise InvalidArgumentError(f"noise scale must be >= 0, got {self.scale}")

    def rng(self, *keys: int) -> np.random.Generator:
        return make_rng(self.seed, *keys)


def _psd_factor(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(S)
        return V * np.sqrt(np.clip(w, 0.0, None))


def discretize(sys: ContinuousSystem, h: float) -> DiscretizedSystem:
    h = check_positive(h, "h")
    Sigma = matexp.noise_covariance(sys.A, h)
    return DiscretizedSystem(
        h=h,
        Aprime=matexp.expm(sys.A, h),
        Bprime=matexp.exp_integral(sys.A, h) @ sys.B,
        Sigma=Sigma,
        sigma_chol=_psd_factor(Sigma),
    )


def step(disc: DiscretizedSystem, x, u, noise: NoiseModel = NoiseModel(), rng=None) -> np.ndarray:
    """One exact grid transition ``A' x + B' u + w`` with ``w ~ N(0, scale^2 Sigma)``."""
    x = check_vector(x, "x", disc.d)
    u = check_vector(u, "u", disc.p)
    nxt = disc.Aprime @ x + disc.Bprime @ u
    if noise.scale > 0:
        if rng is None:
            rng = noise.rng()
        nxt = nxt + noise.scale * (disc.sigma_chol @ rng.standard_normal(disc.d))
    return nxt


_BLOCK = 64


class _Propagator:
    """Evaluates ``x_{k+1} = F x_k + v_k`` a block of steps at a time.

    Within a block of ``m`` steps the states are ``F^j x_0 + sum_{i<j} F^(j-1-i) v_i``,
    a single dense product, which is far cheaper than a Python loop per step.
    """

    def __init__(self, F: np.ndarray, block: int = _BLOCK):
        d = F.shape[0]
        m = block
        pows = np.empty((m + 1, d, d))
        pows[0] = np.eye(d)
        for j in range(1, m + 1):
            pows[j] = pows[j - 1] @ F
        conv = np.zeros((m, d, m, d))
        for j in range(1, m + 1):
            for i in range(j):
                conv[j - 1, :, i, :] = pows[j - 1 - i]
        self.d = d
        self.m = m
        self.free = pows[1:].reshape(m * d, d)
        self.conv = conv.reshape(m * d, m * d)

    def run(self, x0, drive, out, threshold=None):
        """Fill ``out[1:]`` from ``x0`` and ``drive``; stop at the first threshold crossing.

        Returns the first grid index whose state norm is ``>= threshold``, or ``None``.
        The caller has already checked ``x0``.
        """
        n = drive.shape[0]
        d, m = self.d, self.m
        out[0] = x0
        x = x0
        thr2 = None if threshold is None else threshold * threshold
        for start in range(0, n, m):
            cnt = min(m, n - start)
            v = np.zeros(m * d)
            v[: cnt * d] = drive[start:start + cnt].ravel()
            block = (self.free @ x + self.conv @ v).reshape(m, d)[:cnt]
            out[start + 1:start + 1 + cnt] = block
            if thr2 is not None:
                hit = np.flatnonzero(np.einsum("ij,ij->i", block, block) >= thr2)
                if hit.size:
                    return start + 1 + int(hit[0])
            x = block[-1]
        return None


def _noise_draws(disc: DiscretizedSystem, noise: NoiseModel, rng, n: int) -> np.ndarray:
    z = rng.standard_normal((n, disc.d))
    if noise.scale == 0:
        return np.zeros((n, disc.d))
    return noise.scale * (z @ disc.sigma_chol.T)


def simulate(disc: DiscretizedSystem, x0, actions, noise: NoiseModel = NoiseModel(), rng=None) -> SampledTrajectory:
    """Open-loop grid simulation under the given piecewise-constant actions."""
    x0 = check_vector(x0, "x0", disc.d)
    actions = check_matrix(actions, "actions", cols=disc.p)
    if rng is None:
        rng = noise.rng()
    n = actions.shape[0]
    drive = actions @ disc.Bprime.T + _noise_draws(disc, noise, rng, n)
    states = np.empty((n + 1, disc.d))
    _Propagator(disc.Aprime).run(x0, drive, states)
    return SampledTrajectory(disc.h, states, actions)


def simulate_dithered_feedback(
    sys: ContinuousSystem,
    K,
    n_steps: int,
    h: float,
    noise: NoiseModel = NoiseModel(),
    rng=None,
    x0=None,
    dither_scale: float = 1.0,
) -> SampledTrajectory:
    """Closed loop ``U_t = K X_t + u_k`` with i.i.d. dither ``u_k ~ N(0, I_p)``.

    ``K = 0`` is plain open-loop excitation. The recorded actions are the
    dither vectors ``u_k``, which are the inputs of the closed-loop pair
    ``(A + B K, B)``.
    """
    if n_steps < 1:
        raise InvalidArgumentError("n_steps must be >= 1")
    if rng is None:
        rng = noise.rng()
    disc = discretize(sys.closed_loop(K), h)
    x0 = np.zeros(sys.d) if x0 is None else check_vector(x0, "x0", sys.d)
    dither = dither_scale * rng.standard_normal((n_steps, sys.p))
    drive = dither @ disc.Bprime.T + _noise_draws(disc, noise, rng, n_steps)
    states = np.empty((n_steps + 1, sys.d))
    _Propagator(disc.Aprime).run(x0, drive, states)
    return SampledTrajectory(h, states, dither)


def simulate_batch(
    disc: DiscretizedSystem,
    n_traj: int,
    n_steps: int,
    noise: NoiseModel = NoiseModel(),
    rng=None,
    x0=None,
):
    """Independent open-loop trajectories with i.i.d. ``N(0, I_p)`` actions.

    All trajectories start at ``x0`` (zero by default) and advance together.
    Returns ``(states, actions)`` of shapes ``(n_traj, n_steps + 1, d)`` and
    ``(n_traj, n_steps, p)``.
    """
    if n_traj < 1 or n_steps < 1:
        raise InvalidArgumentError("n_traj and n_steps must be >= 1")
    if rng is None:
        rng = noise.rng()
    d, p = disc.d, disc.p
    x = np.zeros(d) if x0 is None else check_vector(x0, "x0", d)
    actions = rng.standard_normal((n_traj, n_steps, p))
    w = _noise_draws(disc, noise, rng, n_traj * n_steps).reshape(n_traj, n_steps, d)
    states = np.empty((n_traj, n_steps + 1, d))
    states[:, 0] = x
    for k in range(n_steps):
        states[:, k + 1] = states[:, k] @ disc.Aprime.T + actions[:, k] @ disc.Bprime.T + w[:, k]
    return states, actions


def simulate_feedback_guarded(
    sys: ContinuousSystem,
    K,
    K_fallback,
    x_start,
    n_steps: int,
    h: float,
    threshold: float = np.inf,
    noise: NoiseModel = NoiseModel(),
    rng=None,
) -> SampledTrajectory:
    """Feedback ``U = K X`` that switches for good to ``K_fallback`` once ``||x_k|| >= threshold``.

    The check runs on grid points only. If the first crossing is at index
    ``j`` the intervals ``j, j+1, ...`` use the fallback gain and the
    trajectory's ``event`` records ``j``. Recorded actions are the
    feedback values ``K_active x_k`` at each interval start.
    """
    if n_steps < 1:
        raise InvalidArgumentError("n_steps must be >= 1")
    threshold = float(threshold)
    if not threshold > 0:
        raise InvalidArgumentError("threshold must be positive")
    K = check_matrix(K, "K", rows=sys.p, cols=sys.d)
    K_fallback = check_matrix(K_fallback, "K_fallback", rows=sys.p, cols=sys.d)
    x_start = check_vector(x_start, "x_start", sys.d)
    if rng is None:
        rng = noise.rng()
    primary = discretize(sys.closed_loop(K), h)
    fallback = discretize(sys.closed_loop(K_fallback), h)
    # One standard-normal block for the whole run keeps the stream independent of the switch time.
    z = rng.standard_normal((n_steps, sys.d))
    if noise.scale == 0:
        z = np.zeros_like(z)

    states = np.empty((n_steps + 1, sys.d))
    thr = None if np.isinf(threshold) else threshold
    event_index = None
    if thr is not None and np.dot(x_start, x_start) >= thr * thr:
        event_index = 0
    else:
        drive = noise.scale * (z @ primary.sigma_chol.T)
        event_index = _Propagator(primary.Aprime).run(x_start, drive, states, thr)
        if event_index is None:
            actions = states[:-1] @ K.T
            return SampledTrajectory(h, states, actions)

    j = event_index
    states[j] = x_start if j == 0 else states[j]
    rest = n_steps - j
    if rest > 0:
        drive = noise.scale * (z[j:] @ fallback.sigma_chol.T)
        _Propagator(fallback.Aprime).run(states[j].copy(), drive, states[j:])
    actions = np.vstack([states[:j] @ K.T, states[j:-1] @ K_fallback.T])
    return SampledTrajectory(h, states, actions, Event(j))
