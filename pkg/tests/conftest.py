import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_periodic(rng, shape, amp, modes=2):
    """Smooth field from the lowest Fourier modes, scaled to sup norm ``amp``."""
    c = np.zeros(shape, dtype=complex)
    for k1 in range(-modes, modes + 1):
        for k2 in (range(-modes, modes + 1) if shape[1] > 1 else (0,)):
            c[k1, k2] = rng.normal() + 1j * rng.normal()
    f = np.real(np.fft.ifft2(c))
    return amp * f / np.max(np.abs(f))
