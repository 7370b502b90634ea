"""LQR synthesis and cost evaluation for continuous-time linear systems.

Lyapunov equations are solved by Kronecker vectorization. The stationary
Riccati equation

    P B R^{-1} B^T P - A^T P - P A - Q = 0

is solved by Newton's method: each step solves one Lyapunov equation in
the current closed loop, which is Kleinman's iteration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import matexp
from ._validation import check_matrix, check_positive, check_square, check_vector
from .exceptions import InvalidArgumentError, NonConvergenceError, StabilityError
from .lsde import ContinuousSystem

__all__ = [
    "LqrWeights",
    "RiccatiSolution",
    "solve_lyapunov",
    "solve_care",
    "optimal_gain",
    "stationary_cost_rate",
    "expected_cost_finite",
    "LQRController",
]


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray
    R: np.ndarray
    mu: float = 0.0
    M: float = np.inf

    def __post_init__(self):
        Q = check_square(self.Q, "Q")
        R = check_square(self.R, "R")
        for name, W in (("Q", Q), ("R", R)):
            if not np.allclose(W, W.T, atol=1e-12, rtol=0):
                raise InvalidArgumentError(f"{name} must be symmetric")
            w = np.linalg.eigvalsh(W)
            if w[0] < self.mu:
                raise InvalidArgumentError(f"{name} must satisfy {name} >= mu I (mu={self.mu})")
            if w[-1] > self.M:
                raise InvalidArgumentError(f"||{name}|| exceeds M={self.M}")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise InvalidArgumentError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls, d: int, p: int) -> "LqrWeights":
        return cls(np.eye(d), np.eye(p))


@dataclass
class RiccatiSolution:
    P: np.ndarray
    residual: float
    iterations: int


def _require_stable(A: np.ndarray, what: str) -> float:
    alpha = matexp.stability_margin(A)
    if not alpha < 0:
        raise StabilityError(f"{what} is not stable (max Re eig = {alpha:.6g})")
    return alpha


def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve ``A^T X + X A + Q = 0`` for stable ``A``.

    The unique solution is ``int_0^inf exp(A^T t) Q exp(A t) dt``.
    """
    A = check_square(A, "A")
    Q = check_square(Q, "Q")
    if Q.shape != A.shape:
        raise InvalidArgumentError("A and Q must have the same shape")
    _require_stable(A, "A")
    d = A.shape[0]
    eye = np.eye(d)
    # Row-major vec: vec(A^T X) = (A^T kron I) vec(X), vec(X A) = (I kron A^T) vec(X).
    L = np.kron(A.T, eye) + np.kron(eye, A.T)
    X = np.linalg.solve(L, -Q.reshape(-1)).reshape(d, d)
    return 0.5 * (X + X.T)


def care_residual(P, A, B, weights: LqrWeights) -> np.ndarray:
    G = B @ np.linalg.solve(weights.R, B.T)
    return P @ G @ P - A.T @ P - P @ A - weights.Q


def solve_care(A, B, weights: LqrWeights, K0=None, tol: float = 1e-9, max_iter: int = 100) -> RiccatiSolution:
    """Stabilizing solution of the stationary Riccati equation.

    Starts from the cost matrix of the stabilizing gain ``K0`` (zero if
    omitted, which requires ``A`` stable). Each step solves
    ``A_k^T dP + dP A_k = F(P_k)`` with ``A_k = A - B R^{-1} B^T P_k``
    and ``F`` the Riccati residual, then sets ``P_{k+1} = P_k + dP``.
    Stops when the residual falls to ``tol`` or ``||dP|| <= 1e-12``, then
    takes one more step if it lowers the residual.
    """
    A = check_square(A, "A")
    d = A.shape[0]
    B = check_matrix(B, "B", rows=d)
    p = B.shape[1]
    if weights.Q.shape != (d, d) or weights.R.shape != (p, p):
        raise InvalidArgumentError("weights do not match system dimensions")
    K0 = np.zeros((p, d)) if K0 is None else check_matrix(K0, "K0", rows=p, cols=d)
    Acl = A + B @ K0
    _require_stable(Acl, "A + B K0")
    Q, R = weights.Q, weights.R
    G = B @ np.linalg.solve(R, B.T)

    P = solve_lyapunov(Acl, Q + K0.T @ R @ K0)
    res = care_residual(P, A, B, weights)
    rnorm = float(np.linalg.norm(res, 2))
    it = 0
    while rnorm > tol and it < max_iter:
        it += 1
        Ak = A - G @ P
        try:
            dP = solve_lyapunov(Ak, -res)
        except StabilityError as exc:
            raise NonConvergenceError(f"Newton iterate lost stability: {exc}") from None
        P = P + dP
        P = 0.5 * (P + P.T)
        res = care_residual(P, A, B, weights)
        rnorm = float(np.linalg.norm(res, 2))
        if np.linalg.norm(dP, 2) <= 1e-12:
            break
    if rnorm > tol and it >= max_iter:
        raise NonConvergenceError(f"Riccati iteration stopped at residual {rnorm:.3g} after {it} steps")
    if rnorm > 0:
        # one polishing step; quadratic convergence takes the residual to rounding level
        try:
            P2 = P + solve_lyapunov(A - G @ P, -res)
            P2 = 0.5 * (P2 + P2.T)
            r2 = float(np.linalg.norm(care_residual(P2, A, B, weights), 2))
            if r2 < rnorm:
                P, rnorm = P2, r2
        except StabilityError:
            pass
    if not np.all(np.isfinite(P)):
        raise NonConvergenceError("Riccati iteration diverged")
    return RiccatiSolution(P, rnorm, it)


def optimal_gain(P, B, weights: LqrWeights) -> np.ndarray:
    """``K = -R^{-1} B^T P``."""
    P = check_square(P, "P")
    B = check_matrix(B, "B", rows=P.shape[0])
    return -np.linalg.solve(weights.R, B.T @ P)


def _closed_loop(sys: ContinuousSystem, weights: LqrWeights, K):
    K = check_matrix(K, "K", rows=sys.p, cols=sys.d)
    M = sys.A + sys.B @ K
    S = weights.Q + K.T @ weights.R @ K
    return M, S


def stationary_cost_rate(sys: ContinuousSystem, weights: LqrWeights, K) -> float:
    """Steady-state expected cost per unit time of the gain ``K``.

    Equals ``tr(int_0^inf exp(M^T t) S exp(M t) dt)`` with ``M = A + B K``
    and ``S = Q + K^T R K``.
    """
    M, S = _closed_loop(sys, weights, K)
    return float(np.trace(solve_lyapunov(M, S)))


def expected_cost_finite(
    sys: ContinuousSystem, weights: LqrWeights, K, x0, T: float, method: str = "lyapunov", sigma: float = 1.0
) -> float:
    """Expected cost ``E int_0^T X^T S X dt`` of ``U = K X`` from ``X_0 = x0``.

    The expectation splits as

        int_0^T x0^T e^{M^T t} S e^{M t} x0 dt + sigma^2 int_0^T (T - t) tr(e^{M^T t} S e^{M t}) dt

    where ``sigma`` scales the Brownian noise (1 is the standard case).

    ``method="lyapunov"`` integrates both terms in closed form with two
    Lyapunov solves. With ``X`` solving ``M^T X + X M + S = 0`` and ``Y``
    solving ``M^T Y + Y M + X = 0``,

        int_0^T e^{M^T t} S e^{M t} dt          = X - e^{M^T T} X e^{M T}
        int_0^T (T - t) e^{M^T t} S e^{M t} dt  = T X - Y + e^{M^T T} Y e^{M T}.

    ``method="simpson"`` uses composite Simpson quadrature with step
    ``min(0.01 / |alpha|, T / 64)``. It halves the step until two
    successive estimates agree to 0.1 %.
    """
    M, S = _closed_loop(sys, weights, K)
    x0 = check_vector(x0, "x0", sys.d)
    T = check_positive(T, "T")
    alpha = _require_stable(M, "A + B K")
    if not (sigma >= 0 and np.isfinite(sigma)):
        raise InvalidArgumentError("sigma must be finite and >= 0")
    s2 = float(sigma) ** 2
    if method == "lyapunov":
        X = solve_lyapunov(M, S)
        Y = solve_lyapunov(M, X)
        E = matexp.expm(M, T)
        tail_X = E.T @ X @ E
        tail_Y = E.T @ Y @ E
        first = x0 @ (X - tail_X) @ x0
        second = T * np.trace(X) - np.trace(Y) + np.trace(tail_Y)
        return float(first + s2 * second)
    if method == "simpson":
        step = min(0.01 / abs(alpha), T / 64)
        coarse = _simpson_cost(M, S, x0, T, step, s2)
        for _ in range(8):
            step /= 2
            fine = _simpson_cost(M, S, x0, T, step, s2)
            if abs(fine - coarse) <= 1e-3 * max(abs(fine), 1e-300):
                return fine
            coarse = fine
        raise NonConvergenceError("Simpson refinement did not reach 0.1% agreement")
    raise InvalidArgumentError(f"unknown method {method!r}")


def _simpson_cost(M, S, x0, T, step, s2=1.0) -> float:
    n = int(np.ceil(T / step))
    n += n % 2
    dt = T / n
    E_step = matexp.expm(M, dt)
    E = np.eye(M.shape[0])
    vals = np.empty(n + 1)
    for i in range(n + 1):
        t = i * dt
        W = E.T @ S @ E
        vals[i] = x0 @ W @ x0 + s2 * (T - t) * np.trace(W)
        E = E_step @ E
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return float(dt / 3 * (w @ vals))


class LQRController(BaseEstimator):
    """Infinite-horizon LQR gain as a scikit-learn style estimator.

    ``fit(A, B)`` solves the Riccati equation; ``predict(X)`` maps states
    (rows) to control inputs ``K x``.

    Parameters
    ----------
    Q, R : array_like or None
        Cost weights; identity of matching size when None.
    tol, max_iter : Newton iteration controls.

    Attributes
    ----------
    P_ : Riccati solution
    K_ : optimal gain ``-R^{-1} B^T P``
    n_iter_ : Newton steps used
    """

    def __init__(self, Q=None, R=None, tol=1e-9, max_iter=100):
        self.Q = Q
        self.R = R
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, A, B, K0=None):
        A = check_square(A, "A")
        B = check_matrix(B, "B", rows=A.shape[0])
        d, p = A.shape[0], B.shape[1]
        weights = LqrWeights(
            np.eye(d) if self.Q is None else self.Q,
            np.eye(p) if self.R is None else self.R,
        )
        sol = solve_care(A, B, weights, K0=K0, tol=self.tol, max_iter=self.max_iter)
        self.P_ = sol.P
        self.K_ = optimal_gain(sol.P, B, weights)
        self.residual_ = sol.residual
        self.n_iter_ = sol.iterations
        self.n_features_in_ = d
        return self

    def predict(self, X):
        if not hasattr(self, "K_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("LQRController is not fitted yet")
        X = check_matrix(np.atleast_2d(X), "X", cols=self.K_.shape[1])
        return X @ self.K_.T
