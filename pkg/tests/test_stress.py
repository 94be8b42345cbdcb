import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from polyshell.polymer_model import HOOKEAN, ConfigGrid, PolymerModel, SpringLaw
from polyshell.stress import (drag_power, face_jump_moment, force_moment, gradient_form_stress,
                              gradient_moment_spectral, kramers_stress, number_density, spectral_q_gradient,
                              truncated_moment, truncated_stress, truncation_constant)

LAWS = (SpringLaw(), SpringLaw(HOOKEAN))


def smooth_density(grid, c):
    """Polynomial in q with nonnegative values for small coefficients."""
    qx, qy = grid.q[..., 0], grid.q[..., 1]
    s = grid.law.b if np.isfinite(grid.law.radius) else 1.0
    return 1.0 + c[0] * qx * qy / s + c[1] * (qx * qx - qy * qy) / s + c[2] * qx / np.sqrt(s)


def test_force_moment_of_equilibrium_is_identity():
    # the FENE integrand is rational in r, so the Gauss rule converges spectrally rather than exactly
    for law in LAWS:
        grid = ConfigGrid(law, 32, 16)
        m = force_moment(np.ones(grid.shape), grid)
        assert np.max(np.abs(m - np.eye(2))) < 1e-8


def test_rest_stress_is_isotropic():
    for law in LAWS:
        model = PolymerModel(law)
        grid = ConfigGrid(law, 32, 16)
        p = model.params
        expected = -(p.k + p.eth) * np.eye(2)
        ones = np.ones((3,) + grid.shape)
        for form in (kramers_stress, gradient_form_stress, truncated_stress):
            T = form(ones, None, model, grid)
            assert np.max(np.abs(T.total - expected)) < 1e-8
            assert np.max(np.abs(T.deviatoric)) < 1e-8


def test_spectral_gradient_of_linear_function():
    grid = ConfigGrid(SpringLaw(), 8, 16)
    a = np.array([0.3, -0.7])
    g = spectral_q_gradient(grid.q @ a, grid)
    assert np.max(np.abs(g - a)) < 1e-10


@given(st.lists(st.floats(-0.2, 0.2), min_size=3, max_size=3))
def test_force_and_gradient_forms_agree(c):
    for law in LAWS:
        model = PolymerModel(law)
        grid = ConfigGrid(law, 16, 16)
        psi = smooth_density(grid, c)[None]
        a = kramers_stress(psi, None, model, grid).total
        b = gradient_form_stress(psi, None, model, grid).total
        assert np.max(np.abs(a - b)) < 1e-7


def test_raw_moments_differ_by_density_times_identity():
    law = SpringLaw()
    grid = ConfigGrid(law, 16, 16)
    psi = smooth_density(grid, (0.1, -0.05, 0.15))
    diff = force_moment(psi, grid) - gradient_moment_spectral(psi, grid)
    assert np.max(np.abs(diff - number_density(psi, grid) * np.eye(2))) < 1e-7


def test_untruncated_face_form_converges_to_spectral():
    law = SpringLaw()
    errs = []
    for nr, nt in ((8, 8), (16, 16), (32, 32)):
        grid = ConfigGrid(law, nr, nt)
        psi = smooth_density(grid, (0.1, -0.05, 0.15))
        errs.append(np.max(np.abs(face_jump_moment(psi, grid) - gradient_moment_spectral(psi, grid))))
    assert errs[2] < errs[1] < errs[0]


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_truncation_bound(seed, ell):
    grid = ConfigGrid(SpringLaw(), 6, 12)
    psi = np.random.default_rng(seed).exponential(ell, (4,) + grid.shape)
    m = truncated_moment(psi, grid, ell)
    assert np.max(np.linalg.norm(m, axis=(-2, -1))) <= truncation_constant(grid) * ell * (1 + 1e-12)


def test_truncation_is_identity_for_small_values():
    grid = ConfigGrid(SpringLaw(), 6, 12)
    psi = np.random.default_rng(1).uniform(0, 1, grid.shape)
    # the cutoff is the identity on [0, ell]
    assert np.max(np.abs(truncated_moment(psi, grid, 5.0) - truncated_moment(psi, grid))) < 1e-14


def test_drag_power_examples():
    vol = np.array([0.5, 0.25])
    T = np.stack([np.eye(2), np.diag([1.0, -1.0])])
    G = np.stack([np.array([[0.0, 1.0], [0.0, 0.0]]), np.diag([2.0, 0.0])])
    assert drag_power(T, G, vol) == 0.25 * 2.0
    assert drag_power(T, np.zeros_like(G), vol) == 0.0
