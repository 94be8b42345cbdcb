import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyshell.errors import SolverDiverged
from polyshell.fluid import (FluidSolver, FluidState, P2Flow, P2Space, ShellRows, coupling_force,
                             discrete_gradient_field, project_coupled, project_divergence_free, solve_stokes,
                             stress_load, velocity_error)
from polyshell.spatial import SlabMesh, deviatoric

MESH = SlabMesh(8, 4)
SPACE = P2Space(MESH)
SOLVER = FluidSolver(SPACE, mu=0.1)
K2 = 2 * np.pi


def wavy(amp=0.05):
    return MESH.geometry(amp * np.sin(K2 * MESH.x))


def random_interior(seed):
    rng = np.random.default_rng(seed)
    _, P_free, _ = SPACE.dof_layout
    return FluidState((P_free @ rng.standard_normal(P_free.shape[1])).reshape(2, -1), np.zeros(SPACE.nv))


def test_mass_matrix_integrates_area():
    for g in (MESH.reference(), wavy()):
        _, M, A, _ = SOLVER.operators(g)
        assert M.sum() == pytest.approx(g.total_volume, rel=1e-13)
        assert np.max(np.abs(A @ np.ones(SPACE.nnodes))) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_convection_is_skew(seed):
    rng = np.random.default_rng(seed)
    eg = SPACE.element_geometry(wavy())
    S = SPACE.convection(eg, rng.standard_normal((2, SPACE.nnodes)))
    u = rng.standard_normal(SPACE.nnodes)
    assert abs(u @ (S @ u)) < 1e-12 * max(1.0, np.abs(S).max() * u @ u)
    assert np.max(np.abs((S + S.T).toarray())) < 1e-12 * np.abs(S).max()


def _stokes_errors(n):
    mesh = SlabMesh(n, n // 2)
    solver = FluidSolver(P2Space(mesh), mu=1.0)
    g = mesh.reference()
    k = K2

    def parts(X, Z):
        s, c = np.sin(k * X), np.cos(k * X)
        f = Z**2 * (1 - Z) ** 2
        f1 = 2 * Z * (1 - Z) ** 2 - 2 * Z**2 * (1 - Z)
        f2 = 2 * (1 - Z) ** 2 - 8 * Z * (1 - Z) + 2 * Z**2
        f3 = -12 * (1 - Z) + 12 * Z
        return s, c, f, f1, f2, f3

    def exact(pts):
        s, c, f, f1, f2, _ = parts(pts[:, 0], pts[:, 1])
        u = np.stack([s * f1, -k * c * f], 1)
        grad = np.stack([np.stack([k * c * f1, s * f2], 1), np.stack([k * k * s * f, -k * c * f1], 1)], 1)
        return u, grad

    def force(pts, t):
        X, Z = pts[:, 0], pts[:, 1]
        s, c, f, f1, f2, f3 = parts(X, Z)
        lap_ux = -k * k * s * f1 + s * f3
        lap_uz = k**3 * c * f - k * c * f2
        # pressure cos(k x) z
        return np.stack([-lap_ux - k * s * Z, -lap_uz + c], 1)

    return velocity_error(solver, g, solve_stokes(solver, g, force), exact)


def test_stokes_taylor_hood_rates():
    errs = np.array([_stokes_errors(n) for n in (8, 16, 32)])
    rates = np.log2(errs[:-1] / errs[1:])
    assert np.all(rates[:, 0] > 2.8) and np.all(rates[:, 1] > 1.85), rates


def test_projection_keeps_solenoidal_field():
    g = wavy()
    u = project_divergence_free(SOLVER, random_interior(1), g)
    again = project_divergence_free(SOLVER, u, g)
    assert np.max(np.abs(again.velocity - u.velocity)) < 1e-12 * np.max(np.abs(u.velocity))


def test_projection_removes_gradient_field():
    g = wavy()
    p = np.random.default_rng(2).standard_normal(SPACE.nv)
    grad = discrete_gradient_field(SOLVER, g, p)
    out = project_divergence_free(SOLVER, grad, g)
    assert np.max(np.abs(out.velocity)) < 1e-10 * np.max(np.abs(grad.velocity))


def test_projection_reduces_random_divergence():
    g = wavy()
    u = random_interior(3)
    _, _, _, D = SOLVER.operators(g)
    before = np.max(np.abs(D @ u.velocity.ravel()))
    after = np.max(np.abs(D @ project_divergence_free(SOLVER, u, g).velocity.ravel()))
    assert after < 1e-6 * before
    assert SOLVER.kinetic_energy(project_divergence_free(SOLVER, u, g), g) <= SOLVER.kinetic_energy(u, g)


def test_coupled_projection_never_adds_energy():
    g = wavy()
    free, P_free, P_shell = SPACE.dof_layout
    rng = np.random.default_rng(4)
    y = rng.standard_normal(P_free.shape[1] + MESH.nx)
    state = FluidState.rest(SPACE)
    new, loss = project_coupled(SOLVER, state, y, g)
    assert loss >= 0.0
    assert SOLVER.divergence_residual(new, g) < 1e-10
    ynew = np.concatenate([P_free.T @ new.velocity.ravel(), new.velocity[1, SPACE.top_vertices]])
    again, loss2 = project_coupled(SOLVER, state, ynew, g)
    assert abs(loss2) < 1e-12 * max(1.0, loss)


def test_fixed_box_energy_identity():
    g = MESH.reference()
    u = project_divergence_free(SOLVER, random_interior(5), g)
    adv = np.random.default_rng(6).standard_normal((2, SPACE.nnodes))
    E0 = SOLVER.kinetic_energy(u, g)
    new, _, info = SOLVER.step(u, g, g, 1e-2, advect=adv)
    E1 = SOLVER.kinetic_energy(new, g)
    assert abs(E1 - E0 + info.dissipation) < 1e-12 * E0
    assert abs(info.convection_power) < 1e-14 * E0
    assert info.divergence < 1e-10


def test_coupled_step_energy_identity():
    """Fluid plus shell kinetic energy changes by load work minus dissipation, the
    mesh-motion defect and the projection loss, to round-off."""
    h, dt = MESH.h, 1e-2
    state = FluidState.rest(SPACE)
    eta = np.zeros(MESH.nx)
    for n in range(5):
        V0 = state.velocity[1, SPACE.top_vertices]
        eta1 = eta + dt * V0
        g0, g1 = MESH.geometry(eta), MESH.geometry(eta1)
        rows = ShellRows(2 * h / dt * np.eye(MESH.nx), h * 0.3 * np.cos(K2 * MESH.x) * np.cos(3 * (n + 0.5) * dt))
        E0 = SOLVER.kinetic_energy(state, g0) + 0.5 * h * V0 @ V0
        state, V1, info = SOLVER.step(state, g0, g1, dt, shell=rows)
        E1 = SOLVER.kinetic_energy(state, g1) + 0.5 * h * V1 @ V1
        budget = -info.dissipation + info.shell_load_work + info.mesh_defect - info.projection_loss
        assert abs(E1 - E0 - budget) < 1e-12 * max(abs(E1 - E0), 1e-12)
        assert info.divergence < 1e-8 and info.projection_loss >= -1e-15
        assert np.array_equal(info.shell_mid, info.velocity_mid[1, SPACE.top_vertices])
        eta = eta1


def test_step_rejects_both_shell_inputs():
    g = MESH.reference()
    with pytest.raises(ValueError):
        SOLVER.step(FluidState.rest(SPACE), g, g, 1e-2, shell_velocity=np.zeros((2, MESH.nx)),
                    shell=ShellRows(np.eye(MESH.nx), np.zeros(MESH.nx)))


def test_solver_failure_is_reported():
    g = MESH.reference()
    bad = FluidState(np.full((2, SPACE.nnodes), np.nan), np.zeros(SPACE.nv))
    with pytest.raises(SolverDiverged):
        SOLVER.step(bad, g, g, 1e-2)


def test_stress_load_work_is_minus_drag_power():
    g = wavy()
    rng = np.random.default_rng(7)
    T = rng.standard_normal((MESH.ncells, 2, 2))
    u = random_interior(8).velocity
    eg = SPACE.element_geometry(g)
    G = (SPACE.cell_gradient_operator(eg, g) @ u.ravel()).reshape(-1, 2, 2)
    drag = np.sum(g.volumes * np.einsum("cab,cab->c", T, deviatoric(G)))
    assert u.ravel() @ stress_load(SPACE, g, T, 0.7) == pytest.approx(-0.7 * drag, rel=1e-12)
    iso = np.eye(2)[None] * rng.standard_normal(MESH.ncells)[:, None, None]
    assert np.max(np.abs(stress_load(SPACE, g, iso, 1.0))) < 1e-13


def _cell_z_centroids(g):
    """Area centroid height of every quadrilateral cell by the shoelace formula."""
    m = g.mesh
    out = np.empty(m.ncells)
    for i in range(m.nx):
        xa, xb = i * m.h, (i + 1) * m.h
        j = (i + 1) % m.nx
        for k in range(m.nz):
            P = np.array([[xa, g.Z[i, k]], [xb, g.Z[j, k]], [xb, g.Z[j, k + 1]], [xa, g.Z[i, k + 1]]])
            Q = np.roll(P, -1, axis=0)
            cr = P[:, 0] * Q[:, 1] - Q[:, 0] * P[:, 1]
            out[m.cell_index(i, k)] = np.sum((P[:, 1] + Q[:, 1]) * cr) / (3 * np.sum(cr))
    return out


def test_cell_gradients_exact_for_quadratics():
    g = wavy()
    Z = SPACE.node_coordinates(g)[:, 1]
    G = P2Flow(SPACE, np.stack([Z**2, 0.0 * Z])).cell_gradients(g, 0.0)
    # cell average of d(z^2)/dz is twice the centroid height
    assert np.max(np.abs(G[:, 0, 0])) < 1e-12 and np.max(np.abs(G[:, 1])) < 1e-12
    assert np.max(np.abs(G[:, 0, 1] - 2 * _cell_z_centroids(g))) < 1e-12


def test_hydrostatic_traction():
    g = wavy()
    state = FluidState.rest(SPACE)
    state.pressure[:] = 2.5
    assert np.allclose(coupling_force(SPACE, g, state, 0.1), 2.5, atol=1e-13)
    T = np.broadcast_to(0.5 * np.eye(2), (MESH.ncells, 2, 2))
    assert np.allclose(coupling_force(SPACE, g, state, 0.1, stress=T), 2.0, atol=1e-13)
