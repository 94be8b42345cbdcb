import numpy as np
import pytest
from scipy import integrate

from polyshell.errors import InequalityViolated
from polyshell.fokker_planck import (ConfigDensity, FPBasis, FPHistory, FPSolver, StepRecord, entropy_dissipation_check,
                                     fisher_information, minimum_principle_check, relative_entropy)
from polyshell.polymer_model import INV_E, ConfigGrid, PolymerModel, SpringLaw, entropy
from polyshell.spatial import ShearFlow, SlabMesh, ZeroFlow, prepare_step

MESH = SlabMesh(8, 4)
MODEL = PolymerModel()
GRID = ConfigGrid(MODEL.law, 6, 12)
# sup_t |psi|^2 + int (x and q gradient energies) over |psi_0|^2 for the run below, measured once
L2_APRIORI_CONSTANT = 1.2758930103360149


def breathing(t):
    return 0.05 * np.sin(2 * np.pi * MESH.x) * np.sin(5 * t)


def run(psi0, flow, eta, steps, dt=2e-3, solver=None):
    solver = solver or FPSolver(MODEL, GRID)
    state = ConfigDensity(psi0.copy())
    g0 = MESH.geometry(eta(0.0))
    hist = FPHistory()
    hist.append(solver.initial_record(state, g0))
    ops_list = []
    for n in range(steps):
        g1 = MESH.geometry(eta((n + 1) * dt))
        ops = prepare_step(g0, g1, flow, n * dt, dt)
        state, rec = solver.step(state, ops)
        hist.append(rec)
        ops_list.append((ops, state.psi_hat.copy()))
        g0 = g1
    return state, hist, ops_list


def still(t):
    return np.zeros(MESH.nx)


def test_basis_is_orthonormal():
    for grid in (GRID, ConfigGrid(SpringLaw(), 8, 16)):
        b = FPBasis(grid)
        assert b.full and np.max(np.abs(b.gram() - np.eye(b.size))) < 1e-8
        psi = np.random.default_rng(0).uniform(0, 1, (3,) + grid.shape)
        assert np.max(np.abs(b.nodal(b.coefficients(psi)) - psi)) < 1e-10


def test_single_mode_coefficients_match_hand_integrals():
    """With one basis function the Galerkin mass and stiffness are scalar quadratures."""
    b = FPBasis(GRID, n_config=1)
    phi = b.vectors[:, 0].reshape(GRID.shape)
    W = GRID.weights
    mass = np.sum(W * phi * phi)
    solver = FPSolver(MODEL, GRID)
    stiff = phi.ravel() @ solver.Dq @ phi.ravel()
    assert abs(mass - 1.0) < 1e-12
    assert abs(stiff - b.eigenvalues[0]) < 1e-12
    # lowest mode is the constant: zero q-dissipation
    assert np.ptp(phi) < 1e-10 and abs(stiff) < 1e-10


def test_equilibrium_right_hand_side_vanishes():
    solver = FPSolver(MODEL, GRID)
    g = MESH.reference()
    ops = prepare_step(g, g, ZeroFlow(), 0.0, 1e-3)
    sysm = solver.assemble(ops)
    P = np.ones((MESH.ncells,) + GRID.shape)
    rhs = solver.explicit_residual(P, ops, sysm)
    lhs_at_one = sysm.mass_old  # implicit part leaves constants untouched
    assert np.max(np.abs(rhs - lhs_at_one)) < 1e-14
    assert np.max(np.abs(sysm.drag_residual(P, np.inf))) == 0.0


def test_equilibrium_is_stationary():
    state, hist, _ = run(np.ones((MESH.ncells,) + GRID.shape), ZeroFlow(), still, 10)
    assert np.max(np.abs(state.psi_hat - 1.0)) < 1e-10
    assert np.max(np.abs(hist.column("fisher_x"))) < 1e-20
    assert np.max(np.abs(hist.column("drag_power"))) == 0.0


def test_drag_flux_form_conserves_per_cell():
    """Under shear the constant state is not stationary, but the finite-volume fluxes
    only move mass between configuration cells."""
    solver = FPSolver(MODEL, GRID)
    g = MESH.reference()
    ops = prepare_step(g, g, ShearFlow(1.0), 0.0, 1e-3)
    sysm = solver.assemble(ops)
    rate = sysm.drag_residual(np.ones((MESH.ncells,) + GRID.shape), np.inf)
    assert np.max(np.abs(rate)) > 1e-3
    assert np.max(np.abs(rate.sum(axis=(1, 2)))) < 1e-13 * np.max(np.abs(rate)) * rate[0].size


def test_mass_conservation_fixed_domain():
    rng = np.random.default_rng(1)
    psi0 = rng.uniform(0.0, 2.0, (MESH.ncells,) + GRID.shape)
    for flow in (ZeroFlow(), ShearFlow(2.0)):
        _, hist, _ = run(psi0, flow, still, 20)
        mass = hist.column("mass")
        assert np.max(np.abs(np.diff(mass))) / mass[0] < 1e-10


def test_q_diffusion_decays_monotonically():
    rng = np.random.default_rng(2)
    psi0 = np.broadcast_to(rng.uniform(0.5, 1.5, GRID.shape), (MESH.ncells,) + GRID.shape).copy()
    _, _, ops_list = run(psi0, ZeroFlow(), still, 20)
    W = GRID.weights
    norms = [np.sum(W * psi0[0] ** 2)] + [np.sum(W * p[0] ** 2) for _, p in ops_list]
    assert np.all(np.diff(norms) < 0)
    solver = FPSolver(MODEL, GRID)
    assert np.min(np.linalg.eigvalsh(solver.Dq)) > -1e-12


def test_minimum_principle_random_data_moving_shell():
    rng = np.random.default_rng(3)
    for _ in range(3):
        psi0 = rng.uniform(0.0, 2.0, (MESH.ncells,) + GRID.shape) * (rng.random((MESH.ncells,) + GRID.shape) > 0.2)
        _, hist, _ = run(psi0, ShearFlow(2.0), breathing, 30)
        assert minimum_principle_check(hist)
        assert np.min(hist.column("positivity_margin")) >= 0.0


def test_minimum_principle_check_raises():
    hist = FPHistory()
    hist.append(StepRecord(0.0, 1.0, 0, 0, 0, 1.0, -1e-6, 1.0))
    with pytest.raises(InequalityViolated):
        minimum_principle_check(hist)


def test_truncation_inactive_above_running_max():
    rng = np.random.default_rng(4)
    psi0 = rng.uniform(0.0, 2.0, (MESH.ncells,) + GRID.shape)
    a, ha, _ = run(psi0, ShearFlow(2.0), breathing, 10)
    b, hb, _ = run(psi0, ShearFlow(2.0), breathing, 10, solver=FPSolver(MODEL, GRID, ell=10.0))
    assert np.max(np.abs(a.psi_hat - b.psi_hat)) < 1e-10


def test_l2_apriori_bound_regression():
    rng = np.random.default_rng(7)
    psi0 = rng.uniform(0, 2, (MESH.ncells,) + GRID.shape)
    W = GRID.weights
    p = MODEL.params

    def l2(psi, g):
        return float(np.sum(g.volumes * np.einsum("cij,ij->c", psi**2, W)))

    dt = 2e-3
    base = l2(psi0, MESH.geometry(breathing(0.0)))
    prev = psi0
    sup, acc = base, 0.0
    _, _, ops_list = run(psi0, ShearFlow(2.0), breathing, 100, dt)
    for ops, psi in ops_list:
        half = 0.5 * (prev + psi)
        fx, fq = fisher_information(half**2, ops, GRID, p.eps, p.A0, p.lam)
        acc += dt * (fx / 4 + fq)
        sup = max(sup, l2(psi, ops.g1))
        prev = psi
    assert (sup + acc) / base <= L2_APRIORI_CONSTANT * (1 + 1e-9)


def test_relative_entropy_examples():
    g = MESH.geometry(breathing(0.1))
    one = np.ones((MESH.ncells,) + GRID.shape)
    assert abs(relative_entropy(one, g.volumes, GRID) - INV_E * g.total_volume) < 1e-14
    assert abs(relative_entropy(INV_E * one, g.volumes, GRID)) < 1e-14


def test_relative_entropy_dense_oracle():
    law = SpringLaw()
    grid = ConfigGrid(law, 24, 32)
    b = law.b

    def psi(r, th):
        return 1.0 + 0.5 * (r * r / b) * np.cos(2 * th) + 0.3 * (r * r / b) ** 2

    vals = psi(grid.r[:, None], grid.theta[None, :])[None]
    approx = relative_entropy(vals, np.ones(1), grid)
    exact, _ = integrate.dblquad(lambda r, th: r * law.maxwellian_radial(r) * entropy(psi(r, th)),
                                 0.0, 2 * np.pi, 0.0, law.radius, epsabs=1e-12, epsrel=1e-12)
    assert abs(approx - exact) < 1e-6
    assert approx > INV_E


def test_fisher_information_signs():
    g = MESH.reference()
    ops = prepare_step(g, g, ZeroFlow(), 0.0, 1e-3)
    p = MODEL.params
    assert fisher_information(np.full((MESH.ncells,) + GRID.shape, 3.0), ops, GRID, p.eps, p.A0, p.lam) == (0.0, 0.0)
    rng = np.random.default_rng(5)
    fx, fq = fisher_information(rng.uniform(0, 2, (MESH.ncells,) + GRID.shape), ops, GRID, p.eps, p.A0, p.lam)
    assert fx > 0 and fq > 0


def test_hookean_gaussian_fisher_converges():
    """psi_hat = exp(a q_1) under the Gaussian: M|grad_q sqrt psi_hat|^2 integrates to a^2/4 exp(a^2/2)
    per unit volume; two-point fluxes converge at first order on the graded radial grid."""
    from polyshell.polymer_model import HOOKEAN
    g = MESH.reference()
    ops = prepare_step(g, g, ZeroFlow(), 0.0, 1e-3)
    a = 0.3
    exact = g.total_volume * a * a / 4 * np.exp(a * a / 2)
    errs = []
    for nr, nt in ((12, 16), (24, 32), (48, 64)):
        grid = ConfigGrid(SpringLaw(HOOKEAN), nr, nt)
        vals = np.broadcast_to(np.exp(a * grid.q[..., 0]), (MESH.ncells,) + grid.shape)
        errs.append(abs(fisher_information(vals, ops, grid, 1.0, 1.0, 1.0)[1] - exact) / exact)
    assert errs[-1] < 5e-3
    assert errs[1] < 0.5 * errs[0] and errs[2] < 0.5 * errs[1]


def test_entropy_check_on_runs():
    rng = np.random.default_rng(6)
    psi0 = rng.uniform(0.0, 2.0, (MESH.ncells,) + GRID.shape)
    _, hist, _ = run(psi0, ZeroFlow(), still, 20)
    assert np.all(np.diff(hist.column("entropy")) <= 1e-15)
    assert entropy_dissipation_check(hist).ok
    _, hist, _ = run(psi0, ShearFlow(2.0), breathing, 20)
    assert entropy_dissipation_check(hist).worst_relative_slack <= 1e-3
    _, hist, _ = run(np.ones_like(psi0), ZeroFlow(), still, 5)
    assert np.max(hist.column("fisher_x")) < 1e-28 and np.all(hist.column("drag_power") == 0)


def test_entropy_check_raises_with_step():
    hist = FPHistory()
    hist.append(StepRecord(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0))
    hist.append(StepRecord(0.1, 1.1, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0))
    with pytest.raises(InequalityViolated) as exc:
        entropy_dissipation_check(hist)
    assert exc.value.step == 1
