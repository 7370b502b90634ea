import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ctlqr", max_examples=40, deadline=None)
settings.load_profile("ctlqr")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_stable(rng, d, margin=0.5):
    A = rng.uniform(-1, 1, (d, d))
    alpha = np.max(np.linalg.eigvals(A).real)
    return A - max(0.0, alpha + margin) * np.eye(d)


def scaled_to(rng, d, norm):
    """Random stable matrix rescaled to the given spectral norm."""
    A = random_stable(rng, d)
    return A * (norm / np.linalg.norm(A, 2))
