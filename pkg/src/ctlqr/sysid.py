"""Finite-observation identification of continuous-time linear systems.

The pipeline has two stages. Least squares on the sampled transitions
estimates the discrete pair ``(A', B')``. The near-identity matrix
logarithm then recovers ``A``, and inverting ``int_0^h exp(A s) ds``
recovers ``B``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import matexp
from ._validation import check_matrix, check_positive
from .exceptions import DegenerateDataError, DomainError, InvalidArgumentError, RecoveryDomainError
from .lsde import SampledTrajectory

__all__ = [
    "SysIdEstimate",
    "MultiTrajectoryBatch",
    "estimate_discrete_single",
    "recover_continuous",
    "identify_single",
    "estimate_discrete_multi",
    "identify_multi",
    "error_transfer_bound",
    "ContinuousTimeIdentifier",
    "MultiTrajectoryIdentifier",
    "estimate_to_csv",
]

RCOND = 1e-12


@dataclass
class SysIdEstimate:
    Atilde: np.ndarray
    Btilde: np.ndarray
    Ahat: np.ndarray
    Bhat: np.ndarray
    h: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class MultiTrajectoryBatch:
    """Independent short trajectories sharing ``h`` and length ``T0``.

    ``states`` has shape ``(H, T0 + 1, d)`` and ``actions`` ``(H, T0, p)``.
    """

    h: float
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.h = check_positive(self.h, "h")
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.states.ndim != 3 or self.actions.ndim != 3:
            raise InvalidArgumentError("batch states/actions must be 3-D (H, steps, dim)")
        if self.states.shape[0] != self.actions.shape[0]:
            raise InvalidArgumentError("states and actions disagree on trajectory count")
        if self.states.shape[1] != self.actions.shape[1] + 1:
            raise InvalidArgumentError("each trajectory needs one more state than actions")
        if self.actions.shape[1] < 1:
            raise InvalidArgumentError("trajectories need at least one transition")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise InvalidArgumentError("batch contains non-finite entries")

    @classmethod
    def from_trajectories(cls, trajs: Sequence[SampledTrajectory]) -> "MultiTrajectoryBatch":
        if not trajs:
            raise DegenerateDataError("empty trajectory batch")
        h = trajs[0].h
        lengths = {t.n_steps for t in trajs}
        if any(t.h != h for t in trajs) or len(lengths) != 1:
            raise InvalidArgumentError("trajectories must share h and length")
        return cls(h, np.stack([t.states for t in trajs]), np.stack([t.actions for t in trajs]))

    @property
    def H(self) -> int:
        return self.states.shape[0]

    @property
    def T0(self) -> int:
        return self.actions.shape[1]


def _pinv_checked(G: np.ndarray, what: str) -> np.ndarray:
    s = np.linalg.svd(G, compute_uv=False)
    if s.size == 0 or s[0] <= 0 or not np.isfinite(s[0]):
        raise DegenerateDataError(f"{what} Gram matrix is zero")
    return np.linalg.pinv(G, rcond=RCOND, hermitian=True)


def _split(traj: SampledTrajectory):
    if not isinstance(traj, SampledTrajectory):
        raise InvalidArgumentError("expected a SampledTrajectory")
    if traj.n_steps == 0:
        raise DegenerateDataError("trajectory has no transitions")
    X = traj.states[:-1]
    Xn = traj.states[1:]
    U = traj.actions
    return X, Xn, U


def estimate_discrete_single(traj: SampledTrajectory, method: str = "fixed-point"):
    """Least-squares estimate ``(Atilde, Btilde)`` of the discrete transition.

    ``method="single-pass"`` regresses ``x_{k+1}`` on ``x_k`` alone, then
    regresses the residual ``x_{k+1} - Atilde x_k`` on ``u_k``.
    ``method="fixed-point"`` (default) returns the fixed point of
    alternating those two regressions. That point is the joint
    least-squares fit on ``[x_k; u_k]``, which is exact on noiseless data,
    while the single pass is biased by the sample cross-correlation of
    ``x_k`` and ``u_k``.

    Returns
    -------
    Atilde, Btilde, diagnostics
    """
    X, Xn, U = _split(traj)
    d, p = X.shape[1], U.shape[1]
    Gx = X.T @ X
    Gu = U.T @ U
    sx = np.linalg.svd(Gx, compute_uv=False)
    diagnostics = {
        "gram_min_singular": float(sx[-1]),
        "n_samples": int(X.shape[0]),
    }
    if method == "single-pass":
        Atilde = (_pinv_checked(Gx, "state") @ (X.T @ Xn)).T
        Btilde = (_pinv_checked(Gu, "input") @ (U.T @ (Xn - X @ Atilde.T))).T
    elif method == "fixed-point":
        if X.shape[0] < d + p:
            raise DegenerateDataError(f"need at least d + p = {d + p} transitions, got {X.shape[0]}")
        _pinv_checked(Gx, "state")
        _pinv_checked(Gu, "input")
        Z = np.hstack([X, U])
        theta = (_pinv_checked(Z.T @ Z, "joint") @ (Z.T @ Xn)).T
        Atilde, Btilde = theta[:, :d], theta[:, d:]
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    diagnostics["atilde_minus_identity"] = float(np.linalg.norm(Atilde - np.eye(d), 2))
    return Atilde, Btilde, diagnostics


def recover_continuous(Atilde, Btilde, h: float):
    """Continuous ``(Ahat, Bhat)`` from a discrete estimate.

    ``Ahat = log(Atilde) / h`` through the near-identity series and
    ``Bhat = (int_0^h exp(Ahat s) ds)^{-1} Btilde``.

    Raises
    ------
    RecoveryDomainError
        If ``||Atilde - I|| > 1/2``.
    """
    Atilde = check_matrix(Atilde, "Atilde")
    Btilde = check_matrix(Btilde, "Btilde", rows=Atilde.shape[0])
    h = check_positive(h, "h")
    try:
        Ahat = matexp.logm_near_identity(Atilde) / h
    except DomainError as exc:
        raise RecoveryDomainError(str(exc)) from None
    Bhat = np.linalg.solve(matexp.exp_integral(Ahat, h), Btilde)
    return Ahat, Bhat


def identify_single(traj: SampledTrajectory, method: str = "fixed-point") -> SysIdEstimate:
    Atilde, Btilde, diag = estimate_discrete_single(traj, method)
    Ahat, Bhat = recover_continuous(Atilde, Btilde, traj.h)
    return SysIdEstimate(Atilde, Btilde, Ahat, Bhat, traj.h, diag)


def estimate_discrete_multi(batch: MultiTrajectoryBatch):
    """Joint least squares over the final transition of each trajectory."""
    d = batch.states.shape[2]
    p = batch.actions.shape[2]
    if batch.H < d + p:
        raise DegenerateDataError(f"need at least d + p = {d + p} trajectories, got {batch.H}")
    Z = np.hstack([batch.states[:, -2, :], batch.actions[:, -1, :]])
    Y = batch.states[:, -1, :]
    G = Z.T @ Z
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= RCOND * s[0]:
        raise DegenerateDataError("final-transition regressors are rank deficient")
    theta = (np.linalg.pinv(G, rcond=RCOND, hermitian=True) @ (Z.T @ Y)).T
    Atilde, Btilde = theta[:, :d], theta[:, d:]
    diag = {
        "gram_min_singular": float(s[-1]),
        "n_samples": int(batch.H),
        "atilde_minus_identity": float(np.linalg.norm(Atilde - np.eye(d), 2)),
    }
    return Atilde, Btilde, diag


def identify_multi(batch: MultiTrajectoryBatch) -> SysIdEstimate:
    Atilde, Btilde, diag = estimate_discrete_multi(batch)
    Ahat, Bhat = recover_continuous(Atilde, Btilde, batch.h)
    return SysIdEstimate(Atilde, Btilde, Ahat, Bhat, batch.h, diag)


def error_transfer_bound(epsilon: float, h: float, kappaA: float, kappaB: float) -> float:
    """Continuous-level error bound ``(2 + kappaB / kappaA) * epsilon / h``."""
    return (2.0 + kappaB / kappaA) * epsilon / h


def estimate_to_csv(est: SysIdEstimate) -> str:
    from .io import matrices_to_csv

    return matrices_to_csv(
        {"Atilde": est.Atilde, "Btilde": est.Btilde, "Ahat": est.Ahat, "Bhat": est.Bhat}
    )


class ContinuousTimeIdentifier(BaseEstimator):
    """Single-trajectory identifier with a scikit-learn style interface.

    Parameters
    ----------
    h : float
        Sampling interval of the observations.
    method : {"fixed-point", "single-pass"}
        Discrete regression variant, see :func:`estimate_discrete_single`.

    Attributes
    ----------
    A_, B_ : ndarray
        Recovered continuous-time dynamics.
    Atilde_, Btilde_ : ndarray
        Discrete-level estimates.
    diagnostics_ : dict
    """

    def __init__(self, h=1 / 30, method="fixed-point"):
        self.h = h
        self.method = method

    def fit(self, states, actions):
        traj = SampledTrajectory(self.h, states, actions)
        est = identify_single(traj, self.method)
        self.Atilde_, self.Btilde_ = est.Atilde, est.Btilde
        self.A_, self.B_ = est.Ahat, est.Bhat
        self.diagnostics_ = est.diagnostics
        self.n_features_in_ = traj.states.shape[1]
        return self

    def predict(self, states, actions):
        """One-step-ahead noiseless state prediction ``Atilde x + Btilde u``."""
        self._check_fitted()
        X = check_matrix(states, "states", cols=self.Atilde_.shape[0])
        U = check_matrix(actions, "actions", rows=X.shape[0], cols=self.Btilde_.shape[1])
        return X @ self.Atilde_.T + U @ self.Btilde_.T

    def _check_fitted(self):
        if not hasattr(self, "A_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError(f"{type(self).__name__} is not fitted yet")


class MultiTrajectoryIdentifier(ContinuousTimeIdentifier):
    """Identifier from many short trajectories; ``fit`` takes 3-D ``(H, steps, dim)`` arrays."""

    def __init__(self, h=1 / 30):
        self.h = h

    def fit(self, states, actions):
        batch = MultiTrajectoryBatch(self.h, states, actions)
        est = identify_multi(batch)
        self.Atilde_, self.Btilde_ = est.Atilde, est.Btilde
        self.A_, self.B_ = est.Ahat, est.Bhat
        self.diagnostics_ = est.diagnostics
        self.n_features_in_ = batch.states.shape[2]
        return self
