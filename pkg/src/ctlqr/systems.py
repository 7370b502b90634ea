"""Random test systems and stabilizer construction for synthetic experiments."""
from __future__ import annotations

import numpy as np
from scipy.signal import place_poles

from . import matexp
from ._validation import check_matrix, check_square
from .exceptions import NumericError


def uniform_matrix(rng: np.random.Generator, d: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Entries i.i.d. uniform on ``[low, high]`` (unstable with high probability for d=3)."""
    return rng.uniform(low, high, size=(d, d))


def random_stable(rng: np.random.Generator, d: int, margin: float = 0.5) -> np.ndarray:
    """Uniform random matrix shifted so that its stability margin is at most ``-margin``."""
    A = uniform_matrix(rng, d)
    alpha = matexp.stability_margin(A)
    return A - max(0.0, alpha + margin) * np.eye(d)


def auto_stabilizer(A, B, margin: float = 0.5) -> np.ndarray:
    """Gain ``K`` moving every eigenvalue of ``A + B K`` to real part ``<= -margin``.

    Eigenvalues are shifted left by ``s = max(0, alpha(A) + margin)``. For
    square invertible ``B`` this is ``K = -s B^{-1}``; otherwise the shifted
    spectrum is assigned by pole placement.
    """
    A = check_square(A, "A")
    B = check_matrix(B, "B", rows=A.shape[0])
    d, p = B.shape
    s = max(0.0, matexp.stability_margin(A) + margin)
    if s == 0.0:
        K = np.zeros((p, d))
    elif p == d and np.linalg.cond(B) < 1e8:
        K = -s * np.linalg.inv(B)
    else:
        poles = np.linalg.eigvals(A) - s
        K = -place_poles(A, B, poles).gain_matrix
    if not matexp.stability_margin(A + B @ K) < 0:
        raise NumericError("auto-stabilizer failed to stabilize A + B K")
    return K
