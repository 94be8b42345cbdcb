import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyshell.errors import InequalityViolated
from polyshell.number_density import (NumberDensity, XiDiagnostics, XiSolver, energy_identity_residual,
                                      marginalize, max_principle_check, renormalized_check)
from polyshell.polymer_model import ConfigGrid, SpringLaw
from polyshell.spatial import ShearFlow, SlabMesh, ZeroFlow, prepare_step

EPS = 0.05


def evolve(mesh, values, flow, eta, steps, dt, eps=EPS):
    solver = XiSolver(eps)
    xi = NumberDensity(values.copy())
    g0 = mesh.geometry(eta(0.0))
    diag = XiDiagnostics()
    diag.record(xi, g0, 0.0)
    acc = 0.0
    for n in range(steps):
        g1 = mesh.geometry(eta((n + 1) * dt))
        ops = prepare_step(g0, g1, flow, n * dt, dt)
        assert solver.positivity_margin(ops) >= 0.0
        xi, d = solver.step(xi, ops)
        acc += d
        diag.record(xi, g1, acc)
        g0 = g1
    return xi, diag


def still(mesh):
    return lambda t: np.zeros(mesh.nx)


def breathing(mesh, amp=0.05):
    return lambda t: amp * np.sin(2 * np.pi * mesh.x) * np.sin(5 * t)


def test_marginalize_examples():
    grid = ConfigGrid(SpringLaw(), 6, 12)
    ones = np.ones((3,) + grid.shape)
    assert np.allclose(marginalize(ones, grid).values, 1.0, atol=1e-14)
    assert np.allclose(marginalize(2.5 * ones, grid, 0.3).values, 2.5, atol=1e-13)
    rng = np.random.default_rng(0)
    psi = rng.uniform(0, 1, (4,) + grid.shape)
    expected = np.array([np.sum(p * grid.weights) for p in psi])
    assert np.allclose(marginalize(psi, grid).values, expected, atol=1e-15)


def test_constant_stays_constant():
    mesh = SlabMesh(8, 4)
    xi, _ = evolve(mesh, np.full(mesh.ncells, 1.7), ShearFlow(2.0), breathing(mesh), 20, 2e-3)
    assert np.max(np.abs(xi.values - 1.7)) < 1e-12


def test_diffusion_decays_to_mean():
    mesh = SlabMesh(8, 4)
    rng = np.random.default_rng(1)
    v0 = rng.uniform(0, 2, mesh.ncells)
    g = mesh.reference()
    mean = np.sum(g.volumes * v0) / g.total_volume
    xi, diag = evolve(mesh, v0, ZeroFlow(), still(mesh), 200, 0.05, eps=0.2)
    assert np.max(np.abs(np.diff(diag.mass))) < 1e-10
    assert np.max(np.abs(xi.values - mean)) < 1e-6


def _heat_error(n, T=0.1, eps=EPS):
    mesh = SlabMesh(2 * n, n)
    g = mesh.reference()
    c = g.centers

    def exact(t):
        return np.cos(2 * np.pi * c[:, 0]) * np.cos(np.pi * c[:, 1]) * np.exp(-eps * 5 * np.pi**2 * t)

    steps = 4 * n
    xi, _ = evolve(mesh, exact(0.0), ZeroFlow(), still(mesh), steps, T / steps, eps)
    return np.sqrt(np.sum(g.volumes * (xi.values - exact(T)) ** 2))


def test_manufactured_heat_second_order():
    errs = [_heat_error(n) for n in (8, 16, 32)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8), rates


def test_energy_identity_fixed_domain():
    mesh = SlabMesh(8, 4)
    v0 = np.random.default_rng(2).uniform(0, 2, mesh.ncells)
    _, diag = evolve(mesh, v0, ZeroFlow(), still(mesh), 50, 1e-2)
    assert energy_identity_residual(diag, EPS) <= 1e-8


@pytest.mark.parametrize("theta", [lambda s: s * s, lambda s: s, lambda s: s**8])
def test_renormalized_functionals(theta):
    mesh = SlabMesh(8, 4)
    v0 = np.random.default_rng(3).uniform(0, 2, mesh.ncells)
    _, diag = evolve(mesh, v0, ShearFlow(2.0), still(mesh), 30, 2e-3)
    assert renormalized_check(diag, theta).ok


def test_renormalized_check_raises():
    diag = XiDiagnostics()
    diag.snapshots = [(np.ones(2), np.ones(2)), (2 * np.ones(2), np.ones(2))]
    with pytest.raises(InequalityViolated) as exc:
        renormalized_check(diag, lambda s: s * s)
    assert exc.value.step == 1
    assert not renormalized_check(diag, lambda s: s * s, raise_on_fail=False).ok


@given(st.integers(0, 2**31 - 1))
def test_max_principle_random_moving(seed):
    mesh = SlabMesh(8, 4)
    v0 = np.random.default_rng(seed).uniform(0, 2, mesh.ncells)
    _, diag = evolve(mesh, v0, ShearFlow(2.0), breathing(mesh), 15, 2e-3)
    assert max_principle_check(diag)
    assert min(diag.min) >= min(v0) - 1e-12


def test_max_principle_check_raises():
    diag = XiDiagnostics()
    diag.sup, diag.min = [1.0, 1.1], [0.0, 0.0]
    with pytest.raises(InequalityViolated):
        max_principle_check(diag)
    diag.sup, diag.min = [1.0, 1.0], [0.0, -1e-6]
    assert not max_principle_check(diag, raise_on_fail=False)
