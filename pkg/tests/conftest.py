import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_quat(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def central_diff(f, x0, h=1e-6):
    """Central-difference Jacobian of ``f`` at ``x0`` (vector input)."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(f(x0))
    J = np.zeros((f0.size, x0.size))
    for i in range(x0.size):
        dx = np.zeros_like(x0)
        dx[i] = h
        J[:, i] = (np.asarray(f(x0 + dx)) - np.asarray(f(x0 - dx))).ravel() / (2 * h)
    return J


def rel_err(A, B):
    return np.linalg.norm(A - B) / max(np.linalg.norm(B), 1e-12)


@pytest.fixture(scope="session")
def denoiser_run():
    """One default training run shared by the denoiser and acceptance suites (wall time recorded)."""
    import time

    from robustvio.denoise import TrainingConfig, synthetic_sequences, train_denoiser

    train = synthetic_sequences(seed=0, count=3)
    held = synthetic_sequences(seed=99, count=2)
    t0 = time.perf_counter()
    td = train_denoiser(train, TrainingConfig(seed=0))
    return {"model": td, "seconds": time.perf_counter() - t0, "train": train, "held": held}
