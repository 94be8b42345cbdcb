"""Regularization operators, the damped fixed-point driver and the energy ledger.

One evaluation of the fixed-point map takes a shell trajectory ``xi`` and a
velocity history ``v`` on a time window and

1. mollifies them into the domain motion ``r xi`` and the transport field ``R v``;
2. advances the configuration density and the number density on the meshes
   of ``r xi`` transported by ``R v``;
3. advances the fluid and the shell together on the same meshes, with the
   Koiter force evaluated on ``xi`` and the polymer stress as a load.

The driver relaxes ``(xi, v) <- (1 - theta) (xi, v) + theta (eta, u)`` until
the two trajectories agree, halving the window when the iteration stalls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import EnergyBreakdown, assemble_breakdown
from .errors import AdmissibilityViolation, InequalityViolated, NoConvergence
from .fluid import FluidSolver, FluidState, P2Flow, P2Space, ShellRows, project_divergence_free, stress_load
from .fokker_planck import ConfigDensity, FPSolver
from .geometry import flat_shell, require_admissible
from .number_density import NumberDensity, XiSolver
from .polymer_model import ConfigGrid, PolymerModel
from .shell_dynamics import (KoiterModel, discrete_gradient, koiter_energy, koiter_hessian, regularizer_energy,
                             regularizer_gradient, regularizer_matrix)
from .spatial import SlabMesh, prepare_step
from .stress import truncated_moment

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
    return out


def kernel_weights(spacing: float, width: float) -> np.ndarray:
    """Symmetric nonnegative weights of unit sum on a lattice, centred at index J."""
    if width <= spacing:
        return np.array([1.0])
    J = int(np.ceil(width / spacing))
    w = bump(np.arange(-J, J + 1) * spacing / width)
    return w / w.sum()


@dataclass(frozen=True)
class RegularizationKernel:
    """Mollifier widths tied to the regularization parameter.

    Defaults: spatial and shell widths ``0.5 sqrt(rho)``, temporal width
    ``0.1 sqrt(rho)``.
    """

    rho: float = 1e-2
    time_width: float | None = None
    space_width: float | None = None
    shell_width: float | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        for w in (self.time_width, self.space_width, self.shell_width):
            if w is not None and w < 0:
                raise ValueError("kernel widths must be nonnegative")

    @property
    def widths(self) -> tuple[float, float, float]:
        r = np.sqrt(self.rho)
        tw = 0.1 * r if self.time_width is None else self.time_width
        sw = 0.5 * r if self.space_width is None else self.space_width
        hw = 0.5 * r if self.shell_width is None else self.shell_width
        return tw, sw, hw


def temporal_matrix(n: int, dt: float, width: float, half_steps: bool) -> np.ndarray:
    """Averaging matrix over a window with even reflection at both ends.

    ``half_steps`` selects samples at ``(m + 1/2) dt`` (reflection maps m to
    ``-1 - m``) instead of ``m dt`` (reflection maps m to ``-m``).
    """
    w = kernel_weights(dt, width)
    J = len(w) // 2
    tau = np.zeros((n, n))
    last = n - 1
    for i in range(n):
        for j, wj in zip(range(-J, J + 1), w):
            m = i + j
            for _ in range(64):
                if m < 0:
                    m = -1 - m if half_steps else -m
                elif m > last:
                    m = 2 * n - 1 - m if half_steps else 2 * last - m
                else:
                    break
            tau[i, min(max(m, 0), last)] += wj
    return tau


class VelocityRegularizer:
    """R v: separable mollification on the reference P2 lattice, then in time.

    The lattice is periodic in x and the field is extended by zero below the
    bottom wall and above the shell.  The spatial operator is symmetric; the
    adjoint of the whole operator applies the transposed temporal matrix.
    """

    def __init__(self, space: P2Space, kernel: RegularizationKernel, nsteps: int, dt: float):
        self.space = space
        tw, sw, _ = kernel.widths
        mesh = space.mesh
        self.wx = kernel_weights(0.5 * mesh.h, sw)
        dz = mesh.height / mesh.nz
        wz = kernel_weights(0.5 * dz, sw)
        nzl = space.lattice_shape[1]
        Cz = np.zeros((nzl, nzl))
        J = len(wz) // 2
        for a in range(nzl):
            for j, w in zip(range(-J, J + 1), wz):
                if 0 <= a + j < nzl:
                    Cz[a, a + j] = w
        self.Cz = Cz
        self.tau = temporal_matrix(nsteps, dt, tw, half_steps=True)

    def _space(self, U: np.ndarray) -> np.ndarray:
        """Apply the spatial operator to (..., nnodes) nodal arrays."""
        lat = self.space.lattice
        shape = self.space.lattice_shape
        lead = U.shape[:-1]
        grid = np.zeros(lead + shape)
        grid[..., lat[:, 0], lat[:, 1]] = U
        J = len(self.wx) // 2
        sx = sum(w * np.roll(grid, -j, axis=-2) for j, w in zip(range(-J, J + 1), self.wx))
        out = np.einsum("ab,...xb->...xa", self.Cz, sx)
        return out[..., lat[:, 0], lat[:, 1]]

    def apply(self, history: np.ndarray) -> np.ndarray:
        """history (N, 2, nnodes) at half steps -> regularized history."""
        return np.einsum("nm,m...->n...", self.tau, self._space(history))

    def adjoint(self, loads: np.ndarray) -> np.ndarray:
        """loads (N, 2 nnodes) -> R^T loads, so that sum v . R^T L = sum (R v) . L."""
        N = loads.shape[0]
        L = loads.reshape(N, 2, -1)
        return self._space(np.einsum("nm,n...->m...", self.tau, L)).reshape(N, -1)

    def sup_gradient_constant(self, h_min: float) -> float:
        """Bound C with |R v|_{W^{1,inf}} <= C |v|_{l2 lattice} from the kernel weights."""
        wmax = float(np.max(self.wx) * np.max(self.Cz))
        return wmax * (1.0 + 2.0 / h_min)


class ShellRegularizer:
    """r xi: periodic mollification on the shell nodes, then in time."""

    def __init__(self, nx: int, kernel: RegularizationKernel, nsteps: int, dt: float):
        _, _, hw = kernel.widths
        self.w = kernel_weights(1.0 / nx, hw)
        self.nx = nx
        self.tau = temporal_matrix(nsteps + 1, dt, kernel.widths[0], half_steps=False)

    def space(self, xi: np.ndarray) -> np.ndarray:
        J = len(self.w) // 2
        return sum(w * np.roll(xi, -j, axis=-1) for j, w in zip(range(-J, J + 1), self.w))

    def symbol(self) -> np.ndarray:
        J = len(self.w) // 2
        k = np.fft.fftfreq(self.nx, d=1.0 / self.nx)
        j = np.arange(-J, J + 1)
        return np.real(np.sum(self.w[:, None] * np.exp(2j * np.pi * np.outer(j, k) / self.nx), axis=0))

    def apply(self, history: np.ndarray) -> np.ndarray:
        """history (N + 1, nx) at the time levels -> regularized history."""
        return self.tau @ self.space(history)


def regularize_velocity(history: np.ndarray, space: P2Space, kernel: RegularizationKernel,
                        dt: float) -> np.ndarray:
    return VelocityRegularizer(space, kernel, history.shape[0], dt).apply(history)


def regularize_shell(history: np.ndarray, kernel: RegularizationKernel, dt: float) -> np.ndarray:
    return ShellRegularizer(history.shape[1], kernel, history.shape[0] - 1, dt).apply(history)


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------


@dataclass
class FixedPointConfig:
    theta: float = 0.5
    max_iterations: int = 200
    tol: float = 1e-7
    window_steps: int | None = None  # None: the whole run is one window
    min_window_steps: int = 1
    patience: int = 25

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("damping theta must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1 or self.min_window_steps < 1:
            raise ValueError("iteration and window limits must be positive")


@dataclass
class CoupledProblem:
    mesh: SlabMesh
    model: PolymerModel
    grid: ConfigGrid
    koiter: KoiterModel
    kernel: RegularizationKernel
    dt: float = 1e-3
    nsteps: int = 100
    ell: float = np.inf
    body_force: object = None  # callable(points (n, 2), t) -> (n, 2)
    shell_load: object = None  # callable(x (nx,), t) -> (nx,)
    eta0: np.ndarray | None = None
    eta1: np.ndarray | None = None
    u0: FluidState | None = None
    psi0: np.ndarray | None = None
    margin: float | None = None  # guard margin; default 1e-3 L

    def __post_init__(self):
        nx = self.mesh.nx
        if self.koiter.shell.shape != (nx, 1):
            raise ValueError("the shell grid must coincide with the top fluid vertices")
        self.eta0 = np.zeros(nx) if self.eta0 is None else np.asarray(self.eta0, dtype=float).ravel()
        self.eta1 = np.zeros(nx) if self.eta1 is None else np.asarray(self.eta1, dtype=float).ravel()
        if self.psi0 is None:
            self.psi0 = np.ones((self.mesh.ncells,) + self.grid.shape)
        if self.margin is None:
            self.margin = 1e-3 * self.mesh.half_width
        if abs(np.mean(self.eta1)) > 1e-12:
            raise ValueError("the initial shell velocity must have zero mean (incompressible fluid)")

    @property
    def rho(self) -> float:
        return self.kernel.rho

    @property
    def mu(self) -> float:
        return self.model.params.mu


def default_problem(nx: int = 16, nz: int = 8, nr: int = 8, ntheta: int = 16, rho: float = 1e-2,
                    dt: float = 1e-3, nsteps: int = 100, **kw) -> CoupledProblem:
    mesh = SlabMesh(nx, nz)
    model = PolymerModel()
    grid = ConfigGrid(model.law, nr, ntheta)
    koiter = KoiterModel(flat_shell(nx, 1, half_width=mesh.half_width))
    return CoupledProblem(mesh, model, grid, koiter, RegularizationKernel(rho), dt, nsteps, **kw)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class StartState:
    t: float
    fluid: FluidState
    eta: np.ndarray
    V: np.ndarray
    psi: np.ndarray
    xi: np.ndarray
    breakdown: EnergyBreakdown | None = None


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    eta: list = field(default_factory=list)  # shell displacement per time level
    V: list = field(default_factory=list)
    mesh_eta: list = field(default_factory=list)  # regularized displacement that moves the mesh
    velocity: list = field(default_factory=list)  # fluid nodal velocity per time level
    xi: list = field(default_factory=list)
    psi_min: list = field(default_factory=list)
    breakdowns: list = field(default_factory=list)
    young: list = field(default_factory=list)  # per-step Young bound increments (theta = 1)
    fixed_point: list = field(default_factory=list)  # (window start, iteration, residual)
    windows: list = field(default_factory=list)  # (start step, steps, iterations)
    convection_power: list = field(default_factory=list)
    divergence: list = field(default_factory=list)
    psi_final: np.ndarray | None = None
    converged: bool = True

    def extend(self, other: "Trajectory", skip_first: bool):
        s = 1 if skip_first else 0
        for name in ("times", "eta", "V", "mesh_eta", "velocity", "xi", "psi_min", "breakdowns"):
            getattr(self, name).extend(getattr(other, name)[s:])
        for name in ("young", "convection_power", "divergence"):
            getattr(self, name).extend(getattr(other, name))
        self.psi_final = other.psi_final

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))


class CoupledSolver:
    def __init__(self, problem: CoupledProblem, cfg: FixedPointConfig | None = None):
        self.problem = problem
        self.cfg = cfg or FixedPointConfig()
        self.space = P2Space(problem.mesh)
        self.fluid = FluidSolver(self.space, problem.mu)
        self.fp = FPSolver(problem.model, problem.grid, problem.ell)
        self.xisolver = XiSolver(problem.model.params.eps)
        self.h = problem.mesh.h
        nx = problem.mesh.nx
        self.Lmat = regularizer_matrix((nx, 1), problem.rho, (1.0, 1.0))
        # elastic linearization at rest, applied implicitly to the difference
        # between the new midpoint and the iterate; the two cancel at a fixed point
        H = koiter_hessian(problem.koiter, np.zeros((nx, 1)))
        self.Kmat = 0.5 * (H + H.T)

    # -- one evaluation of the fixed-point map -------------------------------

    def _shell_rows(self, eta, xi0, xi1, t):
        pb = self.problem
        h, dt, nx = self.h, pb.dt, pb.mesh.nx
        g = np.zeros(nx) if pb.shell_load is None else np.asarray(pb.shell_load(pb.mesh.x, t), float)
        Kd = discrete_gradient(pb.koiter, xi0.reshape(nx, 1), xi1.reshape(nx, 1)).ravel()
        rhoL = regularizer_gradient(eta.reshape(nx, 1), pb.rho).ravel()
        mat = 2.0 * h / dt * np.eye(nx) + 0.5 * dt * h * (self.Lmat + self.Kmat)
        lag = self.Kmat @ (eta - 0.5 * (xi0 + xi1))
        return ShellRows(mat, h * (g - Kd - rhoL - lag)), g

    def evaluate(self, start: StartState, xi: np.ndarray, v: np.ndarray, collect: bool = False,
                 partial: "Trajectory | None" = None):
        pb = self.problem
        mesh, grid, dt = pb.mesh, pb.grid, pb.dt
        N = v.shape[0]
        nx = mesh.nx
        k = pb.model.params.k
        shell = pb.koiter.shell
        shell_reg = ShellRegularizer(nx, pb.kernel, N, dt)
        vel_reg = VelocityRegularizer(self.space, pb.kernel, N, dt)
        r = shell_reg.apply(xi)
        for n in range(N + 1):
            try:
                require_admissible(shell, r[n].reshape(nx, 1), pb.koiter.gamma_min, pb.margin)
            except AdmissibilityViolation as exc:
                self._attach_partial(exc, partial, start, [], [], [])
                raise
        geoms = [mesh.geometry(r[n]) for n in range(N + 1)]
        Rv = vel_reg.apply(v)

        # densities
        psi, xiv = start.psi, start.xi
        t0 = start.t
        spring, fp_recs, xi_inc, ops_list, xis, psis = [], [], [], [], [xiv], [float(psi.min())]
        for n in range(N):
            ops = prepare_step(geoms[n], geoms[n + 1], P2Flow(self.space, Rv[n]), t0 + n * dt, dt)
            spring.append(truncated_moment(psi, grid, pb.ell))
            new, rec = self.fp.step(ConfigDensity(psi, t0 + n * dt), ops)
            xnew, gint = self.xisolver.step(NumberDensity(xiv, t0 + n * dt), ops)
            psi, xiv = new.psi_hat, xnew.values
            fp_recs.append(rec)
            xi_inc.append(gint)
            ops_list.append(ops)
            xis.append(xiv)
            psis.append(float(psi.min()))
        loads = np.array([stress_load(self.space, ops_list[n].gm, spring[n], k) for n in range(N)])
        F_T = vel_reg.adjoint(loads)

        # fluid and shell
        traj = Trajectory() if collect else None
        fluid = start.fluid
        eta, V = start.eta.copy(), start.V.copy()
        etas, Us, Vs = [eta.copy()], np.empty_like(v), []
        bd = start.breakdown
        if collect:
            if bd is None:
                bd = self._breakdown(t0, fluid, geoms[0], V, eta, xis[0], start.psi, None, {})
            traj.times.append(t0)
            traj.eta.append(eta.copy())
            traj.V.append(V.copy())
            traj.mesh_eta.append(r[0].copy())
            traj.velocity.append(fluid.velocity.copy())
            traj.xi.append(xis[0].copy())
            traj.psi_min.append(float(start.psi.min()))
            traj.breakdowns.append(bd)
        for n in range(N):
            t = t0 + n * dt
            rows, g = self._shell_rows(eta, xi[n], xi[n + 1], t + 0.5 * dt)
            body = np.zeros(2 * self.space.nnodes)
            eg_m = self.space.element_geometry(ops_list[n].gm)
            if pb.body_force is not None:
                body = self.space.load(eg_m, pb.body_force, t + 0.5 * dt)
            fluid_new, V1, info = self.fluid.step(fluid, geoms[n], geoms[n + 1], dt, advect=Rv[n],
                                                  load=body + F_T[n], shell=rows)
            Vh = info.shell_mid
            Uh = info.velocity_mid
            Us[n] = Uh
            eta_new = eta + dt * Vh
            try:
                require_admissible(shell, eta_new.reshape(nx, 1), pb.koiter.gamma_min, pb.margin)
            except AdmissibilityViolation as exc:
                self._attach_partial(exc, partial, start, etas[1:], Vs, [t0 + (j + 1) * dt for j in range(n)])
                raise
            if collect:
                inc = {
                    "viscous": info.dissipation,
                    "grad_xi": pb.model.params.eps * xi_inc[n],
                    "fisher_x": k * fp_recs[n].fisher_x,
                    "fisher_q": k * fp_recs[n].fisher_q,
                    "fluid_work": dt * float(Uh.ravel() @ body),
                    "shell_work": dt * self.h * float(Vh @ g),
                    "stress_work": dt * float(Uh.ravel() @ F_T[n]),
                    "drag_power": k * fp_recs[n].drag_power,
                    "numerical": info.projection_loss - info.mesh_defect,
                }
                bd = self._breakdown(t + dt, fluid_new, geoms[n + 1], V1, eta_new, xis[n + 1],
                                     None, bd, inc, entropy_value=fp_recs[n].entropy)
                traj.times.append(t + dt)
                traj.eta.append(eta_new.copy())
                traj.V.append(V1.copy())
                traj.mesh_eta.append(r[n + 1].copy())
                traj.velocity.append(fluid_new.velocity.copy())
                traj.xi.append(xis[n + 1].copy())
                traj.psi_min.append(psis[n + 1])
                traj.breakdowns.append(bd)
                u_sq = float(Uh[0] @ (self.fluid.operators(ops_list[n].gm)[1] @ Uh[0])
                             + Uh[1] @ (self.fluid.operators(ops_list[n].gm)[1] @ Uh[1]))
                f_sq = 0.0
                if pb.body_force is not None:
                    pts = eg_m.points.reshape(-1, 2).copy()
                    pts[:, 0] %= 1.0
                    fq = np.asarray(pb.body_force(pts, t + 0.5 * dt)).reshape(eg_m.points.shape)
                    f_sq = float(np.sum(eg_m.area[:, None] * _quad_w() * np.sum(fq**2, axis=-1)))
                young = dt * (0.5 * (u_sq + self.h * float(Vh @ Vh)) + 0.5 * (f_sq + self.h * float(g @ g)))
                traj.young.append(young)
                traj.convection_power.append(info.convection_power)
                traj.divergence.append(info.divergence)
            fluid, V, eta = fluid_new, V1, eta_new
            etas.append(eta.copy())
            Vs.append(V.copy())
        if collect:
            traj.psi_final = psi
        end = StartState(t0 + N * dt, fluid, eta, V, psi, xiv, bd if collect else None)
        return np.array(etas), Us, traj, end

    @staticmethod
    def _attach_partial(exc, accepted, start, etas, Vs, times):
        """Saved trajectory: accepted windows plus the admissible steps of the current iterate."""
        out = Trajectory()
        if accepted is not None:
            out.extend(accepted, skip_first=False)
            out.fixed_point = list(accepted.fixed_point)
            out.windows = list(accepted.windows)
        if not out.times:
            out.times.append(start.t)
            out.eta.append(start.eta.copy())
            out.V.append(start.V.copy())
        out.times.extend(times)
        out.eta.extend(e.copy() for e in etas)
        out.V.extend(v.copy() for v in Vs)
        out.converged = False
        exc.trajectory = out

    def _breakdown(self, t, fluid, geom, V, eta, xi, psi, previous, inc, entropy_value=None):
        pb = self.problem
        nx = pb.mesh.nx
        kin = self.fluid.kinetic_energy(fluid, geom)
        K = koiter_energy(pb.koiter, eta.reshape(nx, 1), check=False)
        L = pb.rho * regularizer_energy(eta.reshape(nx, 1))
        return assemble_breakdown(t, kin, V, K, L, xi, geom.volumes, psi, pb.grid.weights,
                                  pb.model.params.k, previous, entropy_value=entropy_value, **inc)

    # -- driver --------------------------------------------------------------

    def initial_state(self) -> StartState:
        pb = self.problem
        fluid = pb.u0.copy() if pb.u0 is not None else FluidState.rest(self.space)
        fluid.velocity[1, self.space.top_vertices] = pb.eta1
        fluid.velocity[1, self.space.top_edges] = 0.5 * (pb.eta1 + np.roll(pb.eta1, -1))
        fluid.velocity[0, self.space.top_vertices] = 0.0
        fluid.velocity[0, self.space.top_edges] = 0.0
        if np.any(pb.eta1 != 0.0):
            # interior extension of the shell trace that is discretely solenoidal
            fluid = project_divergence_free(self.fluid, fluid, pb.mesh.geometry(pb.eta0))
        xi0 = np.einsum("cij,ij->c", pb.psi0, pb.grid.weights)
        return StartState(0.0, fluid, pb.eta0.copy(), pb.eta1.copy(), pb.psi0.copy(), xi0)

    def _residual(self, xi, eta, v, u) -> float:
        dt = self.problem.dt
        M = self.fluid.operators(self.problem.mesh.reference())[1]
        de = np.sqrt(dt * np.sum(np.mean((eta - xi) ** 2, axis=1)))
        du_vec = u - v
        du = np.sqrt(dt * sum(float(d[0] @ (M @ d[0]) + d[1] @ (M @ d[1])) for d in du_vec))
        ne = np.sqrt(dt * np.sum(np.mean(eta**2, axis=1)))
        nu = np.sqrt(dt * sum(float(w[0] @ (M @ w[0]) + w[1] @ (M @ w[1])) for w in u))
        return float((de + du) / (1.0 + ne + nu))

    def solve_window(self, start: StartState, nsteps: int, partial: Trajectory):
        cfg = self.cfg
        xi = np.repeat(start.eta[None], nsteps + 1, axis=0)
        v = np.repeat(start.fluid.velocity[None], nsteps, axis=0)
        best, since = np.inf, 0
        history = []
        for it in range(1, cfg.max_iterations + 1):
            eta, u, traj, end = self.evaluate(start, xi, v, collect=True, partial=partial)
            res = self._residual(xi, eta, v, u)
            history.append((start.t, it, res))
            log.debug("window t=%.4g iteration %d residual %.3e", start.t, it, res)
            if res <= cfg.tol:
                # the accepted trajectory is the map evaluated at the converged input
                traj.fixed_point = history
                return traj, end, it
            if res < 0.999 * best:
                best, since = res, 0
            else:
                since += 1
                if since >= cfg.patience:
                    break
            xi = (1.0 - cfg.theta) * xi + cfg.theta * eta
            v = (1.0 - cfg.theta) * v + cfg.theta * u
        partial.fixed_point.extend(history)
        return None, None, len(history)

    def run(self) -> Trajectory:
        pb, cfg = self.problem, self.cfg
        out = Trajectory()
        state = self.initial_state()
        done = 0
        W = cfg.window_steps or pb.nsteps
        while done < pb.nsteps:
            n = min(W, pb.nsteps - done)
            traj, end, its = self.solve_window(state, n, out)
            if traj is None:
                W //= 2
                log.info("fixed point stalled at t=%.4g; window halved to %d steps", state.t, W)
                if W < cfg.min_window_steps:
                    out.converged = False
                    raise NoConvergence(f"fixed point did not converge at t={state.t:.4g} "
                                        f"even on the minimum window")
                continue
            out.extend(traj, skip_first=bool(out.times))
            out.fixed_point.extend(traj.fixed_point)
            out.windows.append((done, n, its))
            state = end
            done += n
        return out


def _quad_w():
    from .fluid import QUAD_WEIGHTS
    return QUAD_WEIGHTS[None, :]


def fixed_point_solve(problem: CoupledProblem, cfg: FixedPointConfig | None = None) -> Trajectory:
    return CoupledSolver(problem, cfg).run()


# ---------------------------------------------------------------------------
# energy ledger
# ---------------------------------------------------------------------------


@dataclass
class LedgerReport:
    ok: bool
    worst_relative_slack: float
    worst_step: int
    monotone: bool  # energy functional non-increasing (meaningful without forcing)
    young_ok: bool  # inequality with the Young-split forcing bound
    coupling_defect: float  # stress work plus drag power at the end
    rows: list

    def summary(self) -> str:
        lines = [
            f"ledger ok={self.ok} worst_relative_slack={self.worst_relative_slack:.3e} step={self.worst_step}",
            f"energy_non_increasing={self.monotone} young_bound_ok={self.young_ok}",
            f"coupling_defect={self.coupling_defect:.3e}",
        ]
        return "\n".join(lines)


def ledger_sides(bd: EnergyBreakdown, bd0: EnergyBreakdown) -> tuple[float, float]:
    """(left, right) of E(t) + 1/2|Xi|^2 + dissipation <= E(0) + 1/2|Xi_0|^2 + work."""
    lhs = bd.energy + bd.xi_l2_half + bd.dissipation
    rhs = bd0.energy + bd0.xi_l2_half + bd.work
    return lhs, rhs


def energy_ledger(traj: Trajectory, tol_ineq: float = 1e-3, raise_on_fail: bool = True,
                  tol_monotone: float = 1e-12) -> LedgerReport:
    bds = traj.breakdowns
    bd0 = bds[0]
    slacks = []
    for bd in bds:
        lhs, rhs = ledger_sides(bd, bd0)
        slacks.append((lhs - rhs) / max(abs(rhs), 1e-300))
    slacks = np.asarray(slacks)
    worst = int(np.argmax(slacks))
    energies = np.array([b.energy + b.xi_l2_half for b in bds])
    monotone = bool(np.all(np.diff(energies) <= tol_monotone * max(abs(energies[0]), 1.0)))
    young = np.concatenate([[0.0], np.cumsum(traj.young)]) if traj.young else np.zeros(len(bds))
    young_ok = all(b.energy + b.xi_l2_half + b.dissipation
                   <= (bd0.energy + bd0.xi_l2_half + y) * (1 + tol_ineq) for b, y in zip(bds, young))
    report = LedgerReport(bool(slacks[worst] <= tol_ineq), float(slacks[worst]), worst, monotone, young_ok,
                          float(bds[-1].stress_work + bds[-1].drag_power), slacks.tolist())
    if not report.ok and raise_on_fail:
        b = bds[worst]
        raise InequalityViolated("energy inequality violated", step=worst,
                                 breakdown={**{n: getattr(b, n) for n in EnergyBreakdown.STATE},
                                            **{n: getattr(b, n) for n in EnergyBreakdown.DISSIPATION},
                                            "work": b.work, "relative_slack": float(slacks[worst])})
    return report


# ---------------------------------------------------------------------------
# refinement in the regularization parameter
# ---------------------------------------------------------------------------


@dataclass
class RhoStudy:
    rhos: list
    cauchy_u: list
    cauchy_eta: list
    cauchy_xi: list
    regularizer_max: list
    monotone: bool
    regularizer_decay: bool

    def summary(self) -> str:
        lines = ["rho study"]
        for r, L in zip(self.rhos, self.regularizer_max):
            lines.append(f"  rho={r:.1e} max rho*L(eta)={L:.3e}")
        for i in range(len(self.cauchy_u)):
            lines.append(f"  levels {i}-{i + 1}: du={self.cauchy_u[i]:.3e} deta={self.cauchy_eta[i]:.3e} "
                         f"dxi={self.cauchy_xi[i]:.3e}")
        lines.append(f"  monotone={self.monotone} regularizer_decay_10x={self.regularizer_decay}")
        return "\n".join(lines)


def mollify_initial_shell(eta0: np.ndarray, rho: float) -> np.ndarray:
    """Initial displacement smoothed with width 0.25 rho^{1/8}.

    For eta0 with two square-integrable derivatives the smoothed field has
    |eta0|_{W^{5,2}} = O(width^-3), so sqrt(rho) |eta0|_{W^{5,2}} = O(rho^{1/8}) -> 0.
    """
    w = kernel_weights(1.0 / eta0.size, 0.25 * rho**0.125)
    J = len(w) // 2
    return sum(wj * np.roll(eta0, -j) for j, wj in zip(range(-J, J + 1), w))


def rho_refinement_study(make_problem, rhos, cfg: FixedPointConfig | None = None) -> RhoStudy:
    """Run the coupled problem for each rho and compare consecutive trajectories.

    ``make_problem(rho)`` returns a :class:`CoupledProblem`; all levels must
    share the mesh and time grid.
    """
    trajs, problems = [], []
    for rho in rhos:
        pb = make_problem(rho)
        problems.append(pb)
        trajs.append(fixed_point_solve(pb, cfg))
    space = P2Space(problems[0].mesh)
    M = FluidSolver(space).operators(problems[0].mesh.reference())[1]
    vols = problems[0].mesh.reference().volumes
    dt = problems[0].dt
    cu, ce, cx = [], [], []
    for a, b in zip(trajs[:-1], trajs[1:]):
        du = a.array("velocity") - b.array("velocity")
        cu.append(float(np.sqrt(dt * sum(d[0] @ (M @ d[0]) + d[1] @ (M @ d[1]) for d in du))))
        ce.append(float(np.sqrt(dt * np.sum(np.mean((a.array("eta") - b.array("eta")) ** 2, axis=1)))))
        cx.append(float(np.sqrt(dt * np.sum(vols * (a.array("xi") - b.array("xi")) ** 2))))
    regs = [float(max(bd.regularizer for bd in t.breakdowns)) for t in trajs]
    mono = all(np.all(np.diff(c) < 0) for c in (cu, ce, cx))
    decay = all(regs[i + 1] <= 0.1 * regs[i] for i in range(len(regs) - 1))
    return RhoStudy(list(rhos), cu, ce, cx, regs, bool(mono), bool(decay))
