import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyshell.errors import SolverDiverged
from polyshell.geometry import ShellState, flat_shell, torus_shell
from polyshell.shell_dynamics import (KoiterModel, ShellForce, bending_symbol, discrete_gradient, koiter_energy,
                                      koiter_gradient, koiter_hessian, regularizer_energy, regularizer_gradient,
                                      regularizer_matrix, shell_energy, static_equilibrium, static_residual,
                                      step_shell)

FLAT = KoiterModel(flat_shell(16, 1))
TORUS = KoiterModel(torus_shell(8, 8), weighted_measure=True)


def smooth(shape, seed, amp=0.02):
    rng = np.random.default_rng(seed)
    x = np.arange(shape[0])[:, None] / shape[0]
    y = np.arange(shape[1])[None, :] / shape[1]
    out = np.zeros(shape)
    for k in range(1, 3):
        a, b, c = rng.normal(size=3)
        out += a * np.sin(2 * np.pi * (k * x + c)) + b * np.cos(2 * np.pi * (k * y + c) + x)
    return amp * out / np.max(np.abs(out))


def test_model_validation():
    with pytest.raises(ValueError):
        KoiterModel(flat_shell(8), lame_mu=0.0)
    with pytest.raises(ValueError):
        KoiterModel(flat_shell(8), lame_lambda=-2.0, lame_mu=1.0)


@pytest.mark.parametrize("model", [FLAT, TORUS])
def test_energy_vanishes_at_rest_and_is_nonnegative(model):
    assert koiter_energy(model, np.zeros(model.shell.shape)) == pytest.approx(0.0, abs=1e-15)
    assert np.max(np.abs(koiter_gradient(model, np.zeros(model.shell.shape)))) < 1e-12
    for seed in range(5):
        assert koiter_energy(model, smooth(model.shell.shape, seed)) > 0.0


@pytest.mark.parametrize("model", [FLAT, TORUS])
def test_gradient_matches_directional_derivative(model):
    eta = smooth(model.shell.shape, 1)
    phi = smooth(model.shell.shape, 2, amp=1.0)
    h = 1e-5
    fd = (koiter_energy(model, eta + h * phi) - koiter_energy(model, eta - h * phi)) / (2 * h)
    exact = float(np.mean(koiter_gradient(model, eta) * phi))
    assert abs(fd - exact) <= 1e-7 * max(abs(exact), 1e-12) + 1e-12


@given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_discrete_gradient_is_exact(s1, s2):
    for model in (FLAT, TORUS):
        a = smooth(model.shell.shape, s1)
        b = smooth(model.shell.shape, s2)
        dg = discrete_gradient(model, a, b)
        lhs = float(np.mean(dg * (b - a)))
        rhs = koiter_energy(model, b) - koiter_energy(model, a)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1e-8)
        assert np.allclose(dg, discrete_gradient(model, b, a), rtol=1e-12, atol=1e-14)
    assert np.array_equal(discrete_gradient(FLAT, a := smooth(FLAT.shell.shape, s1), a), koiter_gradient(FLAT, a))


def test_flat_linear_response_is_bending_symbol():
    """For tiny amplitude on a flat shell the membrane part is quadratic, so the response is pure bending."""
    model = KoiterModel(flat_shell(16, 1), lame_lambda=0.7, lame_mu=1.3, thickness=0.05)
    x = np.arange(16)[:, None] / 16
    for k in (1, 3):
        eta = 1e-6 * np.cos(2 * np.pi * k * x)
        grad = koiter_gradient(model, eta)
        e0 = model.thickness
        oracle = e0**3 / 6 * (model.c_trace + 4 * model.lame_mu) * 2 * (2 * np.pi * k) ** 4
        assert np.max(np.abs(grad - oracle * eta)) < 1e-5 * oracle * 1e-6
        assert bending_symbol(model)[k, 0] == pytest.approx(oracle, rel=1e-12)


def test_regularizer_symbol_and_constants():
    shape = (16, 8)
    x = np.arange(16)[:, None] / 16 + 0 * np.arange(8)[None, :]
    eta = np.cos(2 * np.pi * 3 * x)
    assert regularizer_energy(eta) == pytest.approx(0.5 * (6 * np.pi) ** 10, rel=1e-12)
    expected = 0.4 * (6 * np.pi) ** 10 * eta
    assert np.max(np.abs(regularizer_gradient(eta, 0.2) - expected)) < 1e-11 * np.max(np.abs(expected))
    assert np.max(np.abs(regularizer_gradient(np.full(shape, 2.0), 0.3))) < 1e-12
    assert regularizer_energy(np.full(shape, 2.0)) < 1e-24


def test_regularizer_adjoint_and_gradient():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 8, 4))
    assert np.mean(a * regularizer_gradient(b, 1.0)) == pytest.approx(np.mean(regularizer_gradient(a, 1.0) * b),
                                                                      rel=1e-12)
    # Parseval: the gradient is 2 rho times the quadratic form
    assert np.mean(a * regularizer_gradient(a, 0.5)) == pytest.approx(regularizer_energy(a), rel=1e-12)
    L = regularizer_matrix((8, 4), 1.0, (1.0, 1.0))
    assert np.max(np.abs(L - L.T)) < 1e-9 * np.max(np.abs(L))


def test_hessian_is_symmetric_positive_at_rest():
    H = koiter_hessian(FLAT, np.zeros(FLAT.shell.shape))
    w = np.linalg.eigvalsh(H)
    assert w[0] > -1e-8 * w[-1]


def _vibrate(model, rho, dt, steps, eta0):
    state = ShellState(eta0, np.zeros_like(eta0), 0.0)
    force = ShellForce(np.zeros(model.shell.shape))
    energies = [shell_energy(model, state, rho)]
    for _ in range(steps):
        state = step_shell(state, force, model, rho, dt)
        energies.append(shell_energy(model, state, rho))
    return state, np.array(energies)


def test_free_vibration_energy_drift_small():
    model = KoiterModel(flat_shell(16, 1), thickness=0.2)
    eta0 = smooth(model.shell.shape, 3, amp=0.05)
    _, e = _vibrate(model, 1e-8, 1e-3, 200, eta0)
    assert np.max(np.abs(e - e[0])) / e[0] < 1e-4


def test_shell_step_second_order_in_time():
    model = KoiterModel(flat_shell(16, 1), thickness=0.2)
    eta0 = smooth(model.shell.shape, 3, amp=0.05)
    T = 0.1
    ref, _ = _vibrate(model, 0.0, T / 1280, 1280, eta0)
    errs = [np.max(np.abs(_vibrate(model, 0.0, T / n, n, eta0)[0].eta - ref.eta)) for n in (80, 160, 320)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8), rates


def test_forced_rest_gains_work_energy():
    model = KoiterModel(flat_shell(16, 1))
    g = smooth(model.shell.shape, 4, amp=1.0)
    state = ShellState.rest(model.shell.shape)
    dt, rho = 1e-3, 1e-6
    work = 0.0
    for _ in range(50):
        new = step_shell(state, ShellForce(g), model, rho, dt)
        work += dt * float(np.mean(g * 0.5 * (state.eta_t + new.eta_t)))
        state = new
    assert shell_energy(model, state, rho) == pytest.approx(work, rel=1e-3)


def test_static_equilibrium_small_load_matches_linear_solve():
    model = KoiterModel(flat_shell(16, 1))
    rho = 1e-8
    g = 1e-6 * smooth(model.shell.shape, 5, amp=1.0)
    g -= g.mean()  # the flat shell has no stiffness against a uniform lift
    eta = static_equilibrium(model, g, rho)
    assert static_residual(model, eta, g, rho) <= 1e-12
    from polyshell.shell_dynamics import _symbol
    sym = bending_symbol(model) + 2 * rho * _symbol(g.shape)
    sym[0, 0] = np.inf
    lin = np.real(np.fft.ifft2(np.fft.fft2(g) / sym)) + eta.mean()
    assert np.max(np.abs(eta - lin)) < 1e-3 * np.max(np.abs(lin))


def test_shell_iteration_failure_is_reported():
    model = KoiterModel(flat_shell(16, 1))
    with pytest.raises(SolverDiverged):
        step_shell(ShellState.rest(model.shell.shape), ShellForce(np.full(model.shell.shape, np.nan)), model, 0.0, 1e-3)
