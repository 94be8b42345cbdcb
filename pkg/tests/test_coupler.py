import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyshell.coupler import (CoupledProblem, CoupledSolver, FixedPointConfig, RegularizationKernel,
                               ShellRegularizer, VelocityRegularizer, default_problem, energy_ledger,
                               fixed_point_solve, kernel_weights, mollify_initial_shell, temporal_matrix)
from polyshell.errors import NoConvergence
from polyshell.fluid import P2Space
from polyshell.geometry import flat_shell
from polyshell.shell_dynamics import KoiterModel
from polyshell.spatial import SlabMesh


@given(st.floats(0.01, 0.5), st.floats(0.0, 0.3))
def test_kernel_weights_are_a_symmetric_partition(spacing, width):
    w = kernel_weights(spacing, width)
    assert abs(w.sum() - 1.0) < 1e-14
    assert np.all(w >= 0) and np.allclose(w, w[::-1])
    if width <= spacing:
        assert np.array_equal(w, [1.0])


@pytest.mark.parametrize("half_steps", [True, False])
def test_temporal_matrix_preserves_constants(half_steps):
    tau = temporal_matrix(12, 0.01, 0.035, half_steps)
    assert np.allclose(tau.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(tau >= 0)
    assert np.array_equal(temporal_matrix(5, 0.01, 0.005, half_steps), np.eye(5))


def test_temporal_reflection_examples():
    # five weights, the outer two vanish; node samples reflect m -> -m, half steps m -> -1 - m
    w = kernel_weights(1.0, 1.5)
    assert len(w) == 5 and w[0] == w[4] == 0.0
    tau_node = temporal_matrix(4, 1.0, 1.5, half_steps=False)
    assert np.allclose(tau_node[0], [w[2], 2 * w[1], 0, 0])
    tau_half = temporal_matrix(4, 1.0, 1.5, half_steps=True)
    assert np.allclose(tau_half[0], [w[1] + w[2], w[3], 0, 0])


def test_velocity_regularizer_adjoint():
    mesh = SlabMesh(8, 4)
    space = P2Space(mesh)
    R = VelocityRegularizer(space, RegularizationKernel(0.05), 6, 0.05)
    rng = np.random.default_rng(0)
    v = rng.standard_normal((6, 2, space.nnodes))
    L = rng.standard_normal((6, 2 * space.nnodes))
    lhs = np.sum(R.apply(v).reshape(6, -1) * L)
    rhs = np.sum(v.reshape(6, -1) * R.adjoint(L))
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_shell_regularizer_symbol_and_mean():
    reg = ShellRegularizer(16, RegularizationKernel(0.05), 4, 0.01)
    rng = np.random.default_rng(1)
    xi = rng.standard_normal(16)
    out = reg.space(xi)
    assert abs(out.mean() - xi.mean()) < 1e-14
    assert np.allclose(np.fft.fft(out), reg.symbol() * np.fft.fft(xi), atol=1e-12)
    assert np.all(np.abs(reg.symbol()) <= 1 + 1e-14)
    hist = np.repeat(xi[None], 5, axis=0)
    assert np.allclose(reg.apply(hist), out[None], atol=1e-14)


def test_mollified_initial_shell():
    x = np.arange(64) / 64
    eta = 0.02 * np.abs(np.sin(np.pi * x)) ** 3
    for rho in (1e-1, 1e-3):
        m = mollify_initial_shell(eta, rho)
        assert abs(m.mean() - eta.mean()) < 1e-15
        assert np.max(np.abs(m)) <= np.max(np.abs(eta))
    # narrower width for smaller rho
    e1 = np.max(np.abs(mollify_initial_shell(eta, 1e-1) - eta))
    e2 = np.max(np.abs(mollify_initial_shell(eta, 1e-6) - eta))
    assert e2 < e1


def test_configuration_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(theta=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(tol=0.0)
    with pytest.raises(ValueError):
        RegularizationKernel(rho=0.0)
    with pytest.raises(ValueError):
        default_problem(nx=8, nz=4, eta1=np.ones(8))
    pb = default_problem(nx=8, nz=4)
    with pytest.raises(ValueError):
        CoupledProblem(pb.mesh, pb.model, pb.grid, KoiterModel(flat_shell(16, 1)), pb.kernel)


def small(**kw):
    base = dict(nx=8, nz=4, nr=4, ntheta=8, rho=1e-2, dt=2e-3, nsteps=6)
    base.update(kw)
    return default_problem(**base)


def test_rest_state_is_a_fixed_point():
    traj = fixed_point_solve(small())
    assert traj.converged and len(traj.times) == 7
    assert np.max(np.abs(traj.array("velocity"))) < 1e-12
    assert np.max(np.abs(traj.array("eta"))) < 1e-12
    e = np.array([b.energy for b in traj.breakdowns])
    assert np.max(np.abs(e - e[0])) < 1e-12
    assert energy_ledger(traj).ok


def forced(**kw):
    x_load = lambda x, t: 5.0 * np.cos(2 * np.pi * x) * np.sin(20 * t)
    rng = np.random.default_rng(3)
    pb = small(shell_load=x_load, **kw)
    pb.psi0 = rng.uniform(0.5, 1.5, pb.psi0.shape)
    return pb


def test_forced_run_keeps_invariants():
    traj = fixed_point_solve(forced())
    rep = energy_ledger(traj)
    assert rep.ok and rep.worst_relative_slack <= 1e-6
    assert np.max(traj.divergence) < 1e-8
    assert min(traj.psi_min) >= 0.0
    assert np.max(np.abs(traj.array("eta"))) > 0.0
    # the accepted residual is the last entry of the history and is below tolerance
    assert traj.fixed_point[-1][2] <= FixedPointConfig().tol


def test_coupling_defect_vanishes_with_fixed_point_residual():
    """Stress work uses the computed velocity, drag power the iterate; they agree at the fixed point."""
    defects = []
    for tol in (1e-7, 1e-9, 1e-11):
        traj = fixed_point_solve(forced(), FixedPointConfig(tol=tol))
        b = traj.breakdowns[-1]
        defects.append(abs(b.stress_work + b.drag_power) / abs(b.stress_work))
    assert defects[2] < 1e-6
    assert defects[2] < 1e-2 * defects[1] < 1e-4 * defects[0]


def test_runs_are_deterministic():
    a = fixed_point_solve(forced())
    b = fixed_point_solve(forced())
    assert np.array_equal(a.array("eta"), b.array("eta"))
    assert np.array_equal(a.array("velocity"), b.array("velocity"))


def test_windowed_run_matches_dimensions():
    traj = fixed_point_solve(forced(), FixedPointConfig(window_steps=2))
    assert [w[1] for w in traj.windows] == [2, 2, 2]
    assert len(traj.times) == 7 and np.allclose(np.diff(traj.times), 2e-3)


def test_fixed_point_failure_is_reported():
    with pytest.raises(NoConvergence):
        fixed_point_solve(forced(), FixedPointConfig(max_iterations=1, tol=1e-15, window_steps=2))


def test_elastic_rows_cancel_at_fixed_point():
    solver = CoupledSolver(small())
    nx = 8
    eta = 1e-3 * np.sin(2 * np.pi * np.arange(nx) / nx)
    rows_a, _ = solver._shell_rows(eta, eta - 1e-4, eta + 1e-4, 0.0)
    # the lag term is zero when the midpoint matches the average of the iterate
    rows_b, _ = solver._shell_rows(eta, eta, eta, 0.0)
    assert np.allclose(rows_a.matrix, rows_b.matrix)
    assert np.max(np.abs(rows_a.rhs - rows_b.rhs)) < 1e-6 * np.max(np.abs(rows_b.rhs))
