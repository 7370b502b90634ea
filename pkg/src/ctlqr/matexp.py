"""Dense real-matrix special functions.

Matrix exponential (scaling and squaring over a Taylor core), the
near-identity logarithm series, the integral of the exponential, the
Brownian noise covariance over one sampling interval, and the spectral
stability margin.
"""
from __future__ import annotations

import numpy as np

from ._validation import as_float_array, check_positive, check_square
from .exceptions import DomainError, InvalidArgumentError, NumericError

__all__ = [
    "expm",
    "logm_near_identity",
    "stability_margin",
    "exp_integral",
    "noise_covariance",
]

# Taylor core is applied to a matrix scaled below this 1-norm.
_SCALE_TARGET = 0.5
_MAX_TAYLOR_TERMS = 40
_TAYLOR_RTOL = 1e-16

_LOG_DOMAIN = 0.5
_LOG_TERM_TOL = 1e-15
_LOG_MAX_TERMS = 200


def _taylor_expm(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, _MAX_TAYLOR_TERMS + 1):
        term = term @ M / k
        result = result + term
        if np.linalg.norm(term, 1) < _TAYLOR_RTOL * np.linalg.norm(result, 1):
            break
    return result


def expm(A, t: float = 1.0) -> np.ndarray:
    """Return ``exp(A t)``.

    Parameters
    ----------
    A : (d, d) array_like
    t : float
        Time multiplier; may be zero or negative.
    """
    A = check_square(A)
    t = float(t)
    if not np.isfinite(t):
        raise InvalidArgumentError("t must be finite")
    M = A * t
    norm = np.linalg.norm(M, 1)
    s = 0
    if norm > _SCALE_TARGET:
        s = int(np.ceil(np.log2(norm / _SCALE_TARGET)))
    E = _taylor_expm(M / 2.0**s)
    for _ in range(s):
        E = E @ E
    return E


def logm_near_identity(M) -> np.ndarray:
    """Principal logarithm of a matrix close to the identity.

    Sums ``sum_{k>=1} (-1)^(k-1) (M - I)^k / k``. The caller divides by the
    sampling interval to recover a generator.

    Raises
    ------
    DomainError
        If ``||M - I||_2 > 1/2``.
    """
    M = check_square(M, "M")
    n = M.shape[0]
    E = M - np.eye(n)
    dist = np.linalg.norm(E, 2)
    if dist > _LOG_DOMAIN:
        raise DomainError(f"||M - I|| = {dist:.4g} exceeds {_LOG_DOMAIN}")
    L = np.zeros_like(E)
    power = E.copy()
    for k in range(1, _LOG_MAX_TERMS + 1):
        term = power / k
        if np.linalg.norm(term, 2) < _LOG_TERM_TOL:
            break
        L += term if k % 2 == 1 else -term
        power = power @ E
    return L


def stability_margin(A) -> float:
    """Largest real part among the eigenvalues of ``A`` (negative iff stable)."""
    A = check_square(A)
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue computation failed: {exc}") from None
    return float(np.max(eig.real))


def exp_integral(A, h: float) -> np.ndarray:
    """``int_0^h exp(A s) ds`` from one exponential of an augmented block matrix."""
    A = check_square(A)
    h = check_positive(h, "h")
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = A
    block[:d, d:] = np.eye(d)
    return expm(block, h)[:d, d:]


def noise_covariance(A, h: float) -> np.ndarray:
    """Covariance ``int_0^h exp(A s) exp(A^T s) ds`` of one interval of noise.

    Van Loan's construction: the exponential of ``[[-A, I], [0, A^T]] h``
    has ``exp(A^T h)`` in its lower-right block, and that block transposed
    times the upper-right block gives the integral.
    """
    A = check_square(A)
    h = check_positive(h, "h")
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -A
    block[:d, d:] = np.eye(d)
    block[d:, d:] = A.T
    F = expm(block, h)
    S = F[d:, d:].T @ F[:d, d:]
    return 0.5 * (S + S.T)


def spectral_norm(A) -> float:
    return float(np.linalg.norm(as_float_array(A, "A"), 2))
