"""Incompressible fluid on the moving slab, coupled to the shell velocity.

Taylor-Hood P2-P1 elements on the triangulated slab mesh: every
trapezoidal cell ``(i, k)`` of :class:`~polyshell.spatial.SlabMesh` is split
along its rising diagonal.  Since the tube map only moves vertices
vertically, all triangles stay straight sided and the P2 nodes of a moving
mesh keep their reference lattice positions ``(a h / 2, b dz / 2)``.

Boundary conditions: no slip on the bottom wall; on the top (the shell) the
tangential velocity vanishes and the normal velocity equals the shell
velocity, which is linear between shell nodes.  The shell nodes are the top
vertices, so the shell velocity ``V`` is itself a block of unknowns.

Time stepping is the midpoint rule in arbitrary Lagrangian-Eulerian form

    [M^{n+1/2} (U^{n+1} - U^n) + 1/2 (M^{n+1} - M^n) U^{n+1/2}] / dt
        + S(a - w) U^{n+1/2} + mu A U^{n+1/2} - D^T p = loads,
    D U^{n+1/2} = 0,

with ``S`` the skew-symmetrized convection, ``a`` the transporting velocity
and ``w`` the mesh velocity.  Tested with ``U^{n+1/2}`` this gives the
kinetic-energy balance exactly up to ``1/8 dU (M^{n+1} - M^n) dU``, which
vanishes on fixed meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import PoissonSolveFailure, SolverDiverged
from .geometry import periodic_derivative
from .spatial import MeshGeometry, SlabMesh, TransportField, deviatoric

# 7-point degree-5 rule on the triangle (barycentric points, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)

_DL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d lambda_i / d(xi, eta)
_EDGES = ((0, 1), (1, 2), (2, 0))


def _p2_basis(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (nq, 6) and reference gradients (nq, 6, 2) of the P2 basis."""
    nq = lam.shape[0]
    N = np.empty((nq, 6))
    dN = np.empty((nq, 6, 2))
    for i in range(3):
        N[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        dN[:, i] = (4 * lam[:, i] - 1)[:, None] * _DL[i]
    for e, (i, j) in enumerate(_EDGES):
        N[:, 3 + e] = 4 * lam[:, i] * lam[:, j]
        dN[:, 3 + e] = 4 * (lam[:, j, None] * _DL[i] + lam[:, i, None] * _DL[j])
    return N, dN


_N, _DN = _p2_basis(QUAD_POINTS)


@dataclass
class ElementGeometry:
    area: np.ndarray  # (ntri,)
    grads: np.ndarray  # physical basis gradients (ntri, nq, 6, 2)
    points: np.ndarray  # physical quadrature points (ntri, nq, 2), x unwrapped


class P2Space:
    """Topology of the P2 space on the triangulated periodic slab."""

    def __init__(self, mesh: SlabMesh):
        self.mesh = mesh
        nx, nz = mesh.nx, mesh.nz
        self.nv = nx * (nz + 1)
        nh = nx * (nz + 1)
        nvert = nx * nz
        self.nnodes = self.nv + nh + 2 * nvert

        def vid(i, k):
            return (i % nx) * (nz + 1) + k

        def hid(i, k):
            return self.nv + (i % nx) * (nz + 1) + k

        def eid(i, k):
            return self.nv + nh + (i % nx) * nz + k

        def did(i, k):
            return self.nv + nh + nvert + (i % nx) * nz + k

        I, K = np.meshgrid(np.arange(nx), np.arange(nz), indexing="ij")
        I, K = I.ravel(), K.ravel()
        t1 = np.stack([vid(I, K), vid(I + 1, K), vid(I + 1, K + 1), hid(I, K), eid(I + 1, K), did(I, K)], 1)
        t2 = np.stack([vid(I, K), vid(I + 1, K + 1), vid(I, K + 1), did(I, K), hid(I, K + 1), eid(I, K)], 1)
        self.tri = np.concatenate([t1, t2])
        cells = I * nz + K
        self.tri_cell = np.concatenate([cells, cells])
        # vertex (column, row) pairs and column offsets for unwrapped x
        self.tri_vcol = np.concatenate([np.stack([I, I + 1, I + 1], 1), np.stack([I, I + 1, I], 1)])
        self.tri_vrow = np.concatenate([np.stack([K, K, K + 1], 1), np.stack([K, K + 1, K + 1], 1)])

        # reference lattice coordinates (a, b) of every node
        lat = np.empty((self.nnodes, 2), dtype=int)
        Iv, Kv = np.meshgrid(np.arange(nx), np.arange(nz + 1), indexing="ij")
        Iv, Kv = Iv.ravel(), Kv.ravel()
        lat[vid(Iv, Kv)] = np.stack([2 * Iv, 2 * Kv], 1)
        lat[hid(Iv, Kv)] = np.stack([2 * Iv + 1, 2 * Kv], 1)
        lat[eid(I, K)] = np.stack([2 * I, 2 * K + 1], 1)
        lat[did(I, K)] = np.stack([2 * I + 1, 2 * K + 1], 1)
        self.lattice = lat
        self.lattice_shape = (2 * nx, 2 * nz + 1)

        cols = np.arange(nx)
        self.bottom = np.concatenate([vid(cols, 0), hid(cols, 0)])
        self.top_vertices = vid(cols, nz)
        self.top_edges = hid(cols, nz)

    # -- geometry ------------------------------------------------------------

    def node_heights(self, geom: MeshGeometry) -> np.ndarray:
        """Physical z of every node (edge midpoints average their endpoints)."""
        Zl = geom.Z  # (nx, nz+1)
        a, b = self.lattice[:, 0], self.lattice[:, 1]
        nx = self.mesh.nx
        i0, i1 = (a // 2) % nx, ((a + 1) // 2) % nx
        k0, k1 = b // 2, (b + 1) // 2
        # every non-vertex node is the midpoint of (i0, k0) and (i1, k1): horizontal,
        # vertical or rising-diagonal edge
        return 0.5 * (Zl[i0, k0] + Zl[i1, k1])

    def node_coordinates(self, geom: MeshGeometry) -> np.ndarray:
        x = self.lattice[:, 0] * 0.5 * self.mesh.h
        return np.stack([x, self.node_heights(geom)], axis=1)

    def element_geometry(self, geom: MeshGeometry) -> ElementGeometry:
        h = self.mesh.h
        X = self.tri_vcol * h
        Z = geom.Z[self.tri_vcol % self.mesh.nx, self.tri_vrow]
        J = np.empty((len(self.tri), 2, 2))
        J[:, 0, 0] = X[:, 1] - X[:, 0]
        J[:, 0, 1] = X[:, 2] - X[:, 0]
        J[:, 1, 0] = Z[:, 1] - Z[:, 0]
        J[:, 1, 1] = Z[:, 2] - Z[:, 0]
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(det <= 0):
            raise SolverDiverged("inverted fluid element")
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1] / det
        inv[:, 1, 1] = J[:, 0, 0] / det
        inv[:, 0, 1] = -J[:, 0, 1] / det
        inv[:, 1, 0] = -J[:, 1, 0] / det
        grads = np.einsum("qjr,trs->tqjs", _DN, inv)
        pts = np.einsum("qv,tv->tq", QUAD_POINTS, X), np.einsum("qv,tv->tq", QUAD_POINTS, Z)
        return ElementGeometry(0.5 * det, grads, np.stack(pts, axis=-1))

    # -- assembly ------------------------------------------------------------

    def _scatter(self, local: np.ndarray, rows=None, cols=None, shape=None) -> sp.csr_matrix:
        rows = self.tri if rows is None else rows
        cols = self.tri if cols is None else cols
        r = np.broadcast_to(rows[:, :, None], local.shape)
        c = np.broadcast_to(cols[:, None, :], local.shape)
        shape = (self.nnodes, self.nnodes) if shape is None else shape
        return sp.csr_matrix((local.ravel(), (r.ravel(), c.ravel())), shape=shape)

    def mass(self, eg: ElementGeometry) -> sp.csr_matrix:
        local = np.einsum("q,qi,qj->ij", QUAD_WEIGHTS, _N, _N)[None] * eg.area[:, None, None]
        return self._scatter(local)

    def stiffness(self, eg: ElementGeometry) -> sp.csr_matrix:
        local = np.einsum("q,t,tqis,tqjs->tij", QUAD_WEIGHTS, eg.area, eg.grads, eg.grads)
        return self._scatter(local)

    def divergence(self, eg: ElementGeometry) -> sp.csr_matrix:
        """D with (D U)_v = int lambda_v div u; columns ordered [ux, uz]."""
        L = QUAD_POINTS  # P1 basis values at the quadrature points
        blocks = []
        for c in range(2):
            local = np.einsum("q,t,qv,tqj->tvj", QUAD_WEIGHTS, eg.area, L, eg.grads[..., c])
            blocks.append(self._scatter(local, rows=self.tri[:, :3], shape=(self.nv, self.nnodes)))
        return sp.hstack(blocks).tocsr()

    def convection(self, eg: ElementGeometry, a: np.ndarray) -> sp.csr_matrix:
        """Skew part of (a . grad u) . phi for a nodal P2 field a of shape (2, nnodes)."""
        aq = np.einsum("qj,ctj->tqc", _N, a[:, self.tri])
        C = np.einsum("q,t,tqc,tqjc,qi->tij", QUAD_WEIGHTS, eg.area, aq, eg.grads, _N)
        S = 0.5 * (C - np.swapaxes(C, 1, 2))
        return self._scatter(S)

    def load(self, eg: ElementGeometry, f, t: float) -> np.ndarray:
        """int f . phi for a callable f(points (n, 2), t) -> (n, 2); returns (2 nnodes,)."""
        pts = eg.points.reshape(-1, 2).copy()
        pts[:, 0] %= 1.0
        fq = np.asarray(f(pts, t), dtype=float).reshape(eg.points.shape)
        out = np.zeros((2, self.nnodes))
        for c in range(2):
            local = np.einsum("q,t,tq,qi->ti", QUAD_WEIGHTS, eg.area, fq[..., c], _N)
            np.add.at(out[c], self.tri, local)
        return out.ravel()

    def cell_gradient_operator(self, eg: ElementGeometry, geom: MeshGeometry) -> sp.csr_matrix:
        """G with (G U)[c, a, b] = cell average of d u_a / d x_b, rows c * 4 + 2 a + b."""
        integ = np.einsum("q,t,tqjb->tjb", QUAD_WEIGHTS, eg.area, eg.grads)  # int d_b N_j
        vol = geom.volumes[self.tri_cell]
        rows, cols, vals = [], [], []
        for a in range(2):
            for b in range(2):
                rows.append(np.broadcast_to((self.tri_cell * 4 + 2 * a + b)[:, None], self.tri.shape))
                cols.append(a * self.nnodes + self.tri)
                vals.append(integ[..., b] / vol[:, None])
        n = self.mesh.ncells * 4
        return sp.csr_matrix((np.concatenate([v.ravel() for v in vals]),
                              (np.concatenate([r.ravel() for r in rows]),
                               np.concatenate([c.ravel() for c in cols]))), shape=(n, 2 * self.nnodes))

    def deviatoric_gradient_operator(self, eg: ElementGeometry, geom: MeshGeometry) -> sp.csr_matrix:
        G = self.cell_gradient_operator(eg, geom)
        n = self.mesh.ncells
        P = np.eye(4) - 0.5 * np.outer([1, 0, 0, 1], [1, 0, 0, 1])
        return (sp.kron(sp.identity(n), sp.csr_matrix(P)) @ G).tocsr()

    # -- boundary data -------------------------------------------------------

    @cached_property
    def dof_layout(self):
        """Prolongations: full = P_free y + P_shell V (Dirichlet values are zero)."""
        nn = self.nnodes
        fixed = np.zeros(2 * nn, dtype=bool)
        fixed[self.bottom] = True
        fixed[nn + self.bottom] = True
        top = np.concatenate([self.top_vertices, self.top_edges])
        fixed[top] = True
        fixed[nn + top] = True
        free = np.nonzero(~fixed)[0]
        P_free = sp.csr_matrix((np.ones(free.size), (free, np.arange(free.size))), shape=(2 * nn, free.size))
        nx = self.mesh.nx
        i = np.arange(nx)
        rows = np.concatenate([nn + self.top_vertices, nn + self.top_edges, nn + self.top_edges])
        cols = np.concatenate([i, i, (i + 1) % nx])
        vals = np.concatenate([np.ones(nx), 0.5 * np.ones(nx), 0.5 * np.ones(nx)])
        P_shell = sp.csr_matrix((vals, (rows, cols)), shape=(2 * nn, nx))
        return free, P_free, P_shell

    def mesh_velocity(self, g0: MeshGeometry, g1: MeshGeometry, dt: float) -> np.ndarray:
        """Nodal mesh velocity (2, nnodes): vertical, linear on every triangle."""
        w = np.zeros((2, self.nnodes))
        w[1] = (self.node_heights(g1) - self.node_heights(g0)) / dt
        return w

    def vertical_edge_integrals(self, geom: MeshGeometry, values: np.ndarray) -> np.ndarray:
        """Simpson integrals of a nodal P2 scalar along every vertical edge, (nx, nz)."""
        nx, nz = self.mesh.nx, self.mesh.nz
        I, K = np.meshgrid(np.arange(nx), np.arange(nz), indexing="ij")
        va = values[I * (nz + 1) + K]
        vb = values[I * (nz + 1) + K + 1]
        vm = values[self.nv + nx * (nz + 1) + I * nz + K]
        dz = np.diff(geom.Z, axis=1)
        return dz / 6.0 * (va + 4 * vm + vb)


# ---------------------------------------------------------------------------
# velocity fields handed to the density solvers
# ---------------------------------------------------------------------------


@dataclass
class P2Flow(TransportField):
    """A nodal P2 velocity seen by the finite-volume density solvers.

    The stream function integrates the horizontal component up every
    vertical mesh line exactly (Simpson on each quadratic edge); the cell
    gradients are exact cell averages of the P2 gradient.
    """

    space: P2Space
    values: np.ndarray  # (2, nnodes)

    def stream(self, geom, t):
        seg = self.space.vertical_edge_integrals(geom, self.values[0])
        return np.concatenate([np.zeros((self.space.mesh.nx, 1)), np.cumsum(seg, axis=1)], axis=1)

    def cell_gradients(self, geom, t):
        eg = self.space.element_geometry(geom)
        G = self.space.cell_gradient_operator(eg, geom)
        return (G @ self.values.ravel()).reshape(-1, 2, 2)


# ---------------------------------------------------------------------------
# states and steps
# ---------------------------------------------------------------------------


@dataclass
class FluidState:
    velocity: np.ndarray  # (2, nnodes), physical components at the P2 nodes
    pressure: np.ndarray  # (nv,) P1 nodal pressure
    t: float = 0.0

    @classmethod
    def rest(cls, space: P2Space, t: float = 0.0) -> "FluidState":
        return cls(np.zeros((2, space.nnodes)), np.zeros(space.nv), t)

    def copy(self) -> "FluidState":
        return FluidState(self.velocity.copy(), self.pressure.copy(), self.t)


@dataclass
class FluidStepInfo:
    dissipation: float  # dt mu U^{n+1/2} A U^{n+1/2}
    convection_power: float  # dt U^{n+1/2} S U^{n+1/2}, zero up to round-off
    load_work: float  # dt U^{n+1/2} . loads (fluid rows including the shell trace)
    shell_load_work: float  # dt h V^{n+1/2} . shell loads
    mesh_defect: float  # kinetic energy not accounted for by the midpoint identity
    projection_loss: float  # kinetic energy removed by the end-of-step projection
    divergence: float  # max |D^{n+1} U^{n+1}| relative to the velocity scale
    velocity_mid: np.ndarray | None = None  # solved U^{n+1/2}, shape (2, nnodes)
    shell_mid: np.ndarray | None = None  # solved V^{n+1/2}


@dataclass
class ShellRows:
    """Shell equation rows added to a monolithic fluid step.

    ``matrix`` acts on the midpoint shell velocity, ``rhs`` is the load
    vector (both already multiplied by the nodal measure h).
    """

    matrix: np.ndarray
    rhs: np.ndarray


@dataclass
class FluidSolver:
    space: P2Space
    mu: float = 0.1
    solve_tol: float = 1e-9
    _fixed_cache: dict = field(default_factory=dict, repr=False)

    def operators(self, geom: MeshGeometry):
        key = geom.Z.tobytes()
        if key in self._fixed_cache:
            return self._fixed_cache[key]
        eg = self.space.element_geometry(geom)
        ops = (eg, self.space.mass(eg), self.space.stiffness(eg), self.space.divergence(eg))
        self._fixed_cache = {key: ops} if len(self._fixed_cache) > 3 else {**self._fixed_cache, key: ops}
        return ops

    def kinetic_energy(self, state: FluidState, geom: MeshGeometry) -> float:
        _, M, _, _ = self.operators(geom)
        u = state.velocity
        return 0.5 * float(u[0] @ (M @ u[0]) + u[1] @ (M @ u[1]))

    def dirichlet_energy(self, state: FluidState, geom: MeshGeometry) -> float:
        _, _, A, _ = self.operators(geom)
        u = state.velocity
        return float(u[0] @ (A @ u[0]) + u[1] @ (A @ u[1]))

    def divergence_residual(self, state: FluidState, geom: MeshGeometry) -> float:
        _, _, _, D = self.operators(geom)
        scale = max(np.max(np.abs(state.velocity)), 1e-300)
        return float(np.max(np.abs(D @ state.velocity.ravel())) / scale) if np.any(state.velocity) else 0.0

    def step(self, state: FluidState, g0: MeshGeometry, g1: MeshGeometry, dt: float,
             advect: np.ndarray | None = None, load: np.ndarray | None = None,
             shell_velocity: np.ndarray | None = None, shell: ShellRows | None = None,
             project: bool = True) -> tuple[FluidState, np.ndarray, FluidStepInfo]:
        """One midpoint step; returns (state, shell velocity at t^{n+1}, info).

        Exactly one of ``shell_velocity`` (prescribed pair (V^n, V^{n+1})) and
        ``shell`` (shell rows, the shell velocity is an unknown) may be given;
        with neither the top boundary is at rest.
        """
        sp_ = self.space
        nn = sp_.nnodes
        nx = sp_.mesh.nx
        h = sp_.mesh.h
        fixed = bool(np.array_equal(g0.Z, g1.Z))
        gm = g0 if fixed else MeshGeometry(sp_.mesh, 0.5 * (g0.Z + g1.Z))
        eg0, M0, _, _ = self.operators(g0)
        eg1, M1, _, D1 = self.operators(g1)
        egm, Mm, Am, Dm = self.operators(gm)
        dM = M1 - M0
        w = sp_.mesh_velocity(g0, g1, dt)
        a = (np.zeros((2, nn)) if advect is None else np.asarray(advect, dtype=float)) - w
        S = sp_.convection(egm, a)
        blk = 2.0 / dt * Mm + 0.5 / dt * dM + S + self.mu * Am
        Kfull = sp.block_diag([blk, blk]).tocsr()
        U0 = state.velocity.ravel()
        rhs_full = 2.0 / dt * np.concatenate([Mm @ state.velocity[0], Mm @ state.velocity[1]])
        if load is not None:
            rhs_full = rhs_full + load
        free, P_free, P_shell = sp_.dof_layout
        V0 = state.velocity[1, sp_.top_vertices]

        if shell is not None and shell_velocity is not None:
            raise ValueError("give either a prescribed shell velocity or shell rows, not both")
        if shell is None:
            Vp = np.zeros((2, nx)) if shell_velocity is None else np.asarray(shell_velocity, dtype=float)
            Vh = 0.5 * (Vp[0] + Vp[1])
            lift = P_shell @ Vh
            A11 = P_free.T @ Kfull @ P_free
            b1 = P_free.T @ (rhs_full - Kfull @ lift)
            B = Dm @ P_free
            c = -(Dm @ lift)
            # zero-mean pressure gauge for the closed box
            mvec = self._p1_mass(gm)
            nf = free.size
            sysm = sp.bmat([[A11, -B.T, None], [B, None, sp.csr_matrix(mvec[:, None])],
                            [None, sp.csr_matrix(mvec[None, :]), None]]).tocsc()
            rhs = np.concatenate([b1, c, [0.0]])
            sol = self._solve(sysm, rhs)
            y = sol[:nf]
            p = sol[nf: nf + sp_.nv]
            Uh = P_free @ y + lift
        else:
            P = sp.hstack([P_free, P_shell]).tocsr()
            A11 = P.T @ Kfull @ P + sp.block_diag([sp.csr_matrix((free.size, free.size)),
                                                    sp.csr_matrix(shell.matrix)])
            b1 = P.T @ rhs_full
            b1[free.size:] += shell.rhs + 2.0 * h / dt * V0
            B = Dm @ P
            sysm = sp.bmat([[A11, -B.T], [B, None]]).tocsc()
            rhs = np.concatenate([b1, np.zeros(sp_.nv)])
            sol = self._solve(sysm, rhs)
            y = sol[: P.shape[1]]
            p = sol[P.shape[1]:]
            Uh = P @ y
            Vh = y[free.size:]

        U1 = 2.0 * Uh - U0
        dU = U1 - U0
        diss = dt * self.mu * float(Uh[:nn] @ (Am @ Uh[:nn]) + Uh[nn:] @ (Am @ Uh[nn:]))
        conv = dt * float(Uh[:nn] @ (S @ Uh[:nn]) + Uh[nn:] @ (S @ Uh[nn:]))
        work = dt * float(Uh @ load) if load is not None else 0.0
        shell_work = dt * float(Vh @ shell.rhs) if shell is not None else 0.0
        defect = 0.125 * float(dU[:nn] @ (dM @ dU[:nn]) + dU[nn:] @ (dM @ dU[nn:]))
        new = FluidState(U1.reshape(2, nn), p, state.t + dt)
        loss = 0.0
        if project and not fixed:
            if shell is not None:
                y1 = 2.0 * y - np.concatenate([P_free.T @ U0, V0])
                new, loss = project_coupled(self, new, y1, g1)
            else:
                e_before = self.kinetic_energy(new, g1)
                new = project_divergence_free(self, new, g1)
                loss = e_before - self.kinetic_energy(new, g1)
        div = self.divergence_residual(new, g1)
        V1 = new.velocity[1, sp_.top_vertices]
        return new, V1, FluidStepInfo(diss, conv, work, shell_work, defect, loss, div,
                                      Uh.reshape(2, nn), np.asarray(Vh, dtype=float))

    def _p1_mass(self, geom: MeshGeometry) -> np.ndarray:
        eg = self.operators(geom)[0]
        out = np.zeros(self.space.nv)
        np.add.at(out, self.space.tri[:, :3], np.repeat(eg.area[:, None] / 3.0, 3, axis=1))
        return out

    def _solve(self, A, b) -> np.ndarray:
        try:
            lu = spla.splu(A)
            x = lu.solve(b)
            x = x + lu.solve(b - A @ x)  # one refinement sweep
        except RuntimeError as exc:
            raise SolverDiverged(f"fluid saddle-point factorization failed: {exc}") from exc
        res = np.linalg.norm(A @ x - b)
        # normwise backward error: stiff shell rows make |A||x| the relevant scale
        scale = spla.norm(A, np.inf) * np.linalg.norm(x) + np.linalg.norm(b)
        if not np.all(np.isfinite(x)) or res > self.solve_tol * max(scale, 1.0):
            raise SolverDiverged(f"fluid linear solve residual {res:.3e}")
        return x


def project_divergence_free(solver: FluidSolver, state: FluidState, geom: MeshGeometry,
                            tol: float = 1e-10) -> FluidState:
    """Mass-orthogonal projection onto discretely divergence-free fields.

    Boundary values (wall and shell trace) are kept; the interior is
    corrected by a discrete pressure gradient.  Raises
    :class:`PoissonSolveFailure` when the projected field is not solenoidal.
    """
    sp_ = solver.space
    nn = sp_.nnodes
    _, M, _, D = solver.operators(geom)
    free, P_free, _ = sp_.dof_layout
    U = state.velocity.ravel()
    Mfull = sp.block_diag([M, M]).tocsr()
    Mff = P_free.T @ Mfull @ P_free
    B = D @ P_free
    fixed_part = U - P_free @ (P_free.T @ U)
    mvec = solver._p1_mass(geom)
    sysm = sp.bmat([[Mff, B.T, None], [B, None, sp.csr_matrix(mvec[:, None])],
                    [None, sp.csr_matrix(mvec[None, :]), None]]).tocsc()
    rhs = np.concatenate([P_free.T @ (Mfull @ U), -(D @ fixed_part), [0.0]])
    try:
        sol = spla.splu(sysm).solve(rhs)
    except RuntimeError as exc:
        raise PoissonSolveFailure(f"projection factorization failed: {exc}") from exc
    y = sol[: free.size]
    Unew = P_free @ y + fixed_part
    out = FluidState(Unew.reshape(2, nn), state.pressure, state.t)
    scale = max(np.max(np.abs(Unew)), 1e-300)
    res = np.max(np.abs(D @ Unew)) / scale if np.any(Unew) else 0.0
    if not np.isfinite(res) or res > tol:
        raise PoissonSolveFailure(f"projected divergence {res:.3e} above tolerance")
    return out


def project_coupled(solver: FluidSolver, state: FluidState, y: np.ndarray, geom: MeshGeometry,
                    tol: float = 1e-10) -> tuple[FluidState, float]:
    """Projection of (interior velocity, shell velocity) onto divergence-free pairs.

    Orthogonal in the joint kinetic norm (fluid mass plus h on the shell
    block), so it never adds kinetic energy; the shell trace moves with the
    fluid.  Returns the projected state and the kinetic energy removed.
    """
    sp_ = solver.space
    nn = sp_.nnodes
    h = sp_.mesh.h
    _, M, _, D = solver.operators(geom)
    free, P_free, P_shell = sp_.dof_layout
    P = sp.hstack([P_free, P_shell]).tocsr()
    Mfull = sp.block_diag([M, M]).tocsr()
    nf = free.size
    Mhat = (P.T @ Mfull @ P + sp.block_diag([sp.csr_matrix((nf, nf)),
                                             h * sp.identity(sp_.mesh.nx)])).tocsr()
    B = (D @ P).tocsr()
    sysm = sp.bmat([[Mhat, B.T], [B, None]]).tocsc()
    rhs = np.concatenate([Mhat @ y, np.zeros(sp_.nv)])
    try:
        sol = spla.splu(sysm).solve(rhs)
    except RuntimeError as exc:
        raise PoissonSolveFailure(f"projection factorization failed: {exc}") from exc
    ynew = sol[: y.size]
    loss = 0.5 * float(y @ (Mhat @ y) - ynew @ (Mhat @ ynew))
    Unew = P @ ynew
    scale = max(np.max(np.abs(Unew)), 1e-300)
    res = np.max(np.abs(D @ Unew)) / scale if np.any(Unew) else 0.0
    if not np.isfinite(res) or res > tol:
        raise PoissonSolveFailure(f"projected divergence {res:.3e} above tolerance")
    return FluidState(Unew.reshape(2, nn), state.pressure, state.t), loss


def discrete_gradient_field(solver: FluidSolver, geom: MeshGeometry, p: np.ndarray) -> FluidState:
    """U = M^{-1} D^T p restricted to interior dofs: a pure discrete potential field."""
    sp_ = solver.space
    _, M, _, D = solver.operators(geom)
    free, P_free, _ = sp_.dof_layout
    Mfull = sp.block_diag([M, M]).tocsr()
    Mff = (P_free.T @ Mfull @ P_free).tocsc()
    y = spla.spsolve(Mff, P_free.T @ (D.T @ p))
    return FluidState((P_free @ y).reshape(2, sp_.nnodes), np.zeros(sp_.nv))


def solve_stokes(solver: FluidSolver, geom: MeshGeometry, f, t: float = 0.0) -> FluidState:
    """Steady Stokes problem with homogeneous walls: mu A U - D^T p = int f . phi."""
    sp_ = solver.space
    eg, _, A, D = solver.operators(geom)
    free, P_free, _ = sp_.dof_layout
    K = sp.block_diag([A, A]).tocsr() * solver.mu
    A11 = P_free.T @ K @ P_free
    B = D @ P_free
    mvec = solver._p1_mass(geom)
    sysm = sp.bmat([[A11, -B.T, None], [B, None, sp.csr_matrix(mvec[:, None])],
                    [None, sp.csr_matrix(mvec[None, :]), None]]).tocsc()
    rhs = np.concatenate([P_free.T @ sp_.load(eg, f, t), np.zeros(sp_.nv), [0.0]])
    sol = solver._solve(sysm, rhs)
    U = P_free @ sol[: free.size]
    return FluidState(U.reshape(2, sp_.nnodes), sol[free.size: free.size + sp_.nv], t)


def velocity_error(solver: FluidSolver, geom: MeshGeometry, state: FluidState, exact) -> tuple[float, float]:
    """(L2 error, H1 seminorm error) against a callable exact(points) -> (n, 2, [value, dx, dz])."""
    sp_ = solver.space
    eg = solver.operators(geom)[0]
    pts = eg.points.reshape(-1, 2).copy()
    pts[:, 0] %= 1.0
    val, grad = exact(pts)
    val = val.reshape(eg.points.shape)
    grad = grad.reshape(eg.points.shape + (2,))
    U = state.velocity[:, sp_.tri]  # (2, ntri, 6)
    uq = np.einsum("qj,ctj->tqc", _N, U)
    gq = np.einsum("tqjs,ctj->tqcs", eg.grads, U)
    w = QUAD_WEIGHTS[None, :] * eg.area[:, None]
    l2 = np.sqrt(np.sum(w * np.sum((uq - val) ** 2, axis=-1)))
    h1 = np.sqrt(np.sum(w * np.sum((gq - grad) ** 2, axis=(-2, -1))))
    return float(l2), float(h1)


# ---------------------------------------------------------------------------
# stress load and coupling force
# ---------------------------------------------------------------------------


def stress_load(space: P2Space, geom_mid: MeshGeometry, spring_moment: np.ndarray, k: float) -> np.ndarray:
    """-k G_dev^T (vol T): the load whose work is minus the drag power.

    ``spring_moment`` is the per-cell tensor (ncells, 2, 2) whose pairing with
    the deviatoric cell gradients is the drag power; isotropic parts drop out.
    """
    eg = space.element_geometry(geom_mid)
    G = space.deviatoric_gradient_operator(eg, geom_mid)
    vT = (geom_mid.volumes[:, None, None] * spring_moment).reshape(-1)
    return -k * (G.T @ vT)


def coupling_force(space: P2Space, geom: MeshGeometry, state: FluidState, mu: float,
                   stress: np.ndarray | None = None) -> np.ndarray:
    """Normal traction on the shell at every top vertex.

    Evaluates e_z . (-2 mu D(u) - T + p I) n_eta with the non-unit deformed
    normal n_eta = (-d_x eta, 1), so the area factor is included.  Velocity
    gradients at a vertex are area-weighted averages over the adjacent
    triangles; the stress is averaged over the two adjacent cells.
    """
    nx, nz = space.mesh.nx, space.mesh.nz
    eg = space.element_geometry(geom)
    eta = geom.Z[:, -1] - geom.mesh.height
    slope = periodic_derivative(eta, 0, 1.0)
    n = np.stack([-slope, np.ones(nx)], axis=1)
    grad_sum = np.zeros((nx, 2, 2))
    area_sum = np.zeros(nx)
    _, dN_v = _p2_basis(np.eye(3))  # reference gradients at the element vertices
    U = state.velocity[:, space.tri]
    top_ids = {int(v): i for i, v in enumerate(space.top_vertices)}
    X = space.tri_vcol * space.mesh.h
    Zt = geom.Z[space.tri_vcol % nx, space.tri_vrow]
    J = np.stack([np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], -1),
                  np.stack([Zt[:, 1] - Zt[:, 0], Zt[:, 2] - Zt[:, 0]], -1)], 1)
    Jinv = np.linalg.inv(J)
    gv = np.einsum("vjr,trs->tvjs", dN_v, Jinv)  # (ntri, vertex, basis, 2)
    gu = np.einsum("tvjs,ctj->tvcs", gv, U)  # grad u at each element vertex
    for t, lv in zip(*np.nonzero(np.isin(space.tri[:, :3], space.top_vertices))):
        i = top_ids[int(space.tri[t, lv])]
        grad_sum[i] += eg.area[t] * gu[t, lv]
        area_sum[i] += eg.area[t]
    grad = grad_sum / area_sum[:, None, None]
    sym = grad + np.swapaxes(grad, 1, 2)
    p = state.pressure[space.top_vertices]
    sigma = -mu * sym + p[:, None, None] * np.eye(2)
    if stress is not None:
        cells_r = np.arange(nx) * nz + nz - 1
        cells_l = ((np.arange(nx) - 1) % nx) * nz + nz - 1
        sigma = sigma - 0.5 * (stress[cells_r] + stress[cells_l])
    return np.einsum("ib,ib->i", sigma[:, 1, :], n)
