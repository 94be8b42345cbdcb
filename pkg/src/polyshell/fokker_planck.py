"""Fokker-Planck solver for psi_hat = psi / M on the moving slab.

Discretization
--------------
* configuration space: polar finite volumes of
  :class:`~polyshell.polymer_model.ConfigGrid`; the M^m-weighted two-point
  Laplacian is diagonalized once by a generalized eigenproblem per angular
  Fourier mode, giving a basis orthonormal in the discrete L^2_{M^m}.
* physical space: cell indicators of :class:`~polyshell.spatial.SlabMesh`
  pulled through the tube map, with two-point diffusion fluxes.
* time: Crank-Nicolson on both diffusions, explicit upwind transport relative
  to the moving mesh, explicit upwind drag with face value Lambda_ell.

With the full configuration basis the Galerkin system and the nodal finite
volume system coincide, which is what delivers the discrete minimum principle
under the step-size condition reported by :meth:`FPSolver.positivity_margin`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InequalityViolated, SolverDiverged
from .polymer_model import ConfigGrid, PolymerModel, cutoff_Lambda, cutoff_T, entropy
from .spatial import StepOperators
from .stress import face_jump_moment

TOL_NEG = 1e-8


# ---------------------------------------------------------------------------
# configuration basis
# ---------------------------------------------------------------------------


def q_laplacian(grid: ConfigGrid) -> np.ndarray:
    """Dense M^m-weighted two-point Laplacian on the polar nodes (i * ntheta + j)."""
    nr, nt = grid.shape
    n = nr * nt
    D = np.zeros((n, n))
    idx = np.arange(n).reshape(nr, nt)
    Tr, Ta = grid.radial_transmissibility, grid.angular_transmissibility
    for f in range(nr - 1):
        a, b = idx[f], idx[f + 1]
        D[a, a] += Tr[f]
        D[b, b] += Tr[f]
        D[a, b] -= Tr[f]
        D[b, a] -= Tr[f]
    for i in range(nr):
        a, b = idx[i], np.roll(idx[i], -1)
        D[a, a] += Ta[i]
        D[b, b] += Ta[i]
        D[a, b] -= Ta[i]
        D[b, a] -= Ta[i]
    return D


@dataclass
class FPBasis:
    """W-orthonormal eigenbasis of the configuration Laplacian.

    ``vectors[:, r]`` holds nodal values of the r-th basis function and
    ``eigenvalues[r]`` its Rayleigh quotient; ``n_config`` truncates the basis
    to the lowest modes (default: full basis).
    """

    grid: ConfigGrid
    n_config: int | None = None

    def __post_init__(self):
        nr, nt = self.grid.shape
        W = self.grid.weights
        Wr = W[:, 0]
        Tr, Ta = self.grid.radial_transmissibility, self.grid.angular_transmissibility
        radial = np.zeros((nr, nr))
        for f in range(nr - 1):
            radial[f, f] += Tr[f]
            radial[f + 1, f + 1] += Tr[f]
            radial[f, f + 1] -= Tr[f]
            radial[f + 1, f] -= Tr[f]
        theta = self.grid.theta
        vecs, vals, modes = [], [], []
        for m in range(nt // 2 + 1):
            sym = 2.0 - 2.0 * np.cos(m * self.grid.dtheta)
            lam, U = sla.eigh(radial + np.diag(sym * Ta), np.diag(Wr))
            for trig in (np.cos, np.sin):
                ang = trig(m * theta)
                norm = np.linalg.norm(ang)
                if norm < 1e-8 * np.sqrt(nt):
                    continue
                ang = ang / norm
                for r in range(nr):
                    vecs.append(np.outer(U[:, r], ang).ravel())
                    vals.append(lam[r])
                    modes.append(m)
        order = np.argsort(vals, kind="stable")
        self.vectors = np.array(vecs).T[:, order]
        self.eigenvalues = np.array(vals)[order]
        self.angular_modes = np.array(modes)[order]
        if self.vectors.shape[1] != nr * nt:
            raise SolverDiverged("configuration basis is incomplete")
        if self.n_config is not None:
            self.vectors = self.vectors[:, : self.n_config]
            self.eigenvalues = self.eigenvalues[: self.n_config]
            self.angular_modes = self.angular_modes[: self.n_config]

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    @property
    def full(self) -> bool:
        return self.size == self.grid.nr * self.grid.ntheta

    def gram(self) -> np.ndarray:
        w = self.grid.weights.ravel()
        return self.vectors.T @ (w[:, None] * self.vectors)

    def coefficients(self, psi_hat: np.ndarray) -> np.ndarray:
        """Project nodal values (..., nr, ntheta) onto the basis."""
        w = self.grid.weights.ravel()
        flat = psi_hat.reshape(psi_hat.shape[:-2] + (-1,))
        return (flat * w) @ self.vectors

    def nodal(self, coeffs: np.ndarray) -> np.ndarray:
        return (coeffs @ self.vectors.T).reshape(coeffs.shape[:-1] + self.grid.shape)


# ---------------------------------------------------------------------------
# state, operators, diagnostics
# ---------------------------------------------------------------------------


@dataclass
class ConfigDensity:
    psi_hat: np.ndarray  # (ncells, nr, ntheta)
    t: float = 0.0

    def copy(self) -> "ConfigDensity":
        return ConfigDensity(self.psi_hat.copy(), self.t)

    @property
    def min(self) -> float:
        return float(self.psi_hat.min())


@dataclass
class FPSystem:
    """Operators of one step, in the nodal finite-volume form.

    The Galerkin residual for test pair (basis r, cell l) is obtained by
    contracting any of these with ``basis.vectors[:, r]`` and the indicator of l.
    """

    mass_old: np.ndarray  # (ncells, nq): vol^n W^m
    mass_new: np.ndarray
    x_diffusion: object  # sparse (ncells, ncells), multiply by eps W^m
    q_diffusion: np.ndarray  # (nq, nq), multiply by vol^{n+1/2} A / (4 lam)
    transport: object  # sparse upwind outflow operator, volumes per step
    drag_radial: np.ndarray  # (ncells, nr-1, ntheta): G : S_f
    drag_angular: np.ndarray  # (ncells, nr, ntheta)
    volumes_mid: np.ndarray

    def drag_residual(self, psi_hat: np.ndarray, ell: float) -> np.ndarray:
        """Rate of M^m-mass change at every node due to drag, per unit volume."""
        return drag_rate(psi_hat, self.drag_radial, self.drag_angular, ell)


def drag_rate(psi_hat: np.ndarray, s_rad: np.ndarray, s_ang: np.ndarray, ell: float) -> np.ndarray:
    lam = psi_hat if np.isinf(ell) else cutoff_Lambda(ell, psi_hat)
    out = np.zeros_like(psi_hat)
    # radial faces: from node (f, j) to (f + 1, j) along s_rad
    up = np.where(s_rad > 0, lam[..., :-1, :], lam[..., 1:, :])
    flux = s_rad * up
    out[..., :-1, :] -= flux
    out[..., 1:, :] += flux
    # angular faces: from (i, j) to (i, j + 1)
    nxt = np.roll(lam, -1, axis=-1)
    up = np.where(s_ang > 0, lam, nxt)
    flux = s_ang * up
    out -= flux
    out += np.roll(flux, 1, axis=-1)
    return out


@dataclass
class StepRecord:
    t: float
    entropy: float
    fisher_x: float  # increment over the step, 4 eps int M |grad_x sqrt psi_hat|^2
    fisher_q: float  # increment, (A0 / lam) int M |grad_q sqrt psi_hat|^2
    drag_power: float  # increment, int G : T^ell_1
    mass: float
    min: float
    positivity_margin: float


@dataclass
class FPHistory:
    records: list = field(default_factory=list)

    def append(self, rec: StepRecord):
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def relative_entropy(psi_hat: np.ndarray, volumes: np.ndarray, grid: ConfigGrid) -> float:
    """sum over cells of vol * sum_q W^m F(psi_hat), clipping negatives at zero."""
    vals = entropy(np.maximum(psi_hat, 0.0))
    return float(np.sum(volumes * np.einsum("cij,ij->c", vals, grid.weights)))


def fisher_information(psi_hat: np.ndarray, ops: StepOperators, grid: ConfigGrid, eps: float,
                       A0: float, lam: float, k: float = 1.0) -> tuple[float, float]:
    """Discrete (4 k eps int M|grad_x sqrt|^2, k A0/lam int M|grad_q sqrt|^2) at psi_hat."""
    root = np.sqrt(np.maximum(psi_hat, 0.0))
    nc = root.shape[0]
    flat = root.reshape(nc, -1)
    w = grid.weights.ravel()
    fx = 0.0
    for a, b, T in (ops.gm.x_faces, ops.gm.z_faces):
        fx += float(np.sum(T[:, None] * w * (flat[b] - flat[a]) ** 2))
    Tr, Ta = grid.radial_transmissibility, grid.angular_transmissibility
    jr = np.diff(root, axis=-2) ** 2
    ja = (np.roll(root, -1, axis=-1) - root) ** 2
    per_cell = np.einsum("cfj,f->c", jr, Tr) + np.einsum("cij,i->c", ja, Ta)
    fq = float(np.sum(ops.gm.volumes * per_cell))
    return 4.0 * k * eps * fx, k * A0 / lam * fq


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


class FPSolver:
    def __init__(self, model: PolymerModel, grid: ConfigGrid, ell: float = np.inf,
                 n_config: int | None = None, residual_tol: float = 1e-9):
        if model.law.K != 1 or model.law.d != 2:
            raise ValueError("the solver covers a single spring in two dimensions")
        self.model = model
        self.grid = grid
        self.ell = ell
        self.basis = FPBasis(grid, n_config)
        self.Dq = q_laplacian(grid)
        self.q_coeff = float(model.params.rouse[0, 0]) / (4.0 * model.params.lam)
        self.residual_tol = residual_tol
        self._cache = {}

    @property
    def eps(self) -> float:
        return self.model.params.eps

    # -- assembly ------------------------------------------------------------

    def assemble(self, ops: StepOperators) -> FPSystem:
        W = self.grid.weights.ravel()
        radial, angular = self.grid.face_moments
        G = ops.gradients
        return FPSystem(
            mass_old=ops.g0.volumes[:, None] * W,
            mass_new=ops.g1.volumes[:, None] * W,
            x_diffusion=ops.gm.laplacian,
            q_diffusion=self.Dq,
            transport=ops.upwind,
            drag_radial=np.einsum("cab,fjab->cfj", G, radial),
            drag_angular=np.einsum("cab,ijab->cij", G, angular),
            volumes_mid=ops.gm.volumes,
        )

    def explicit_residual(self, psi_hat: np.ndarray, ops: StepOperators, system: FPSystem) -> np.ndarray:
        """Right-hand side of the linear step, in M^m-mass units, shape (ncells, nq)."""
        nc = psi_hat.shape[0]
        P = psi_hat.reshape(nc, -1)
        W = self.grid.weights.ravel()
        dt = ops.dt
        rhs = system.mass_old * P
        rhs -= 0.5 * dt * self.eps * (system.x_diffusion @ P) * W
        rhs -= 0.5 * dt * self.q_coeff * system.volumes_mid[:, None] * (P @ self.Dq)
        rhs -= (system.transport @ P) * W
        drag = system.drag_residual(psi_hat, self.ell).reshape(nc, -1)
        rhs += dt * system.volumes_mid[:, None] * drag
        return rhs

    def _spatial_eigen(self, ops: StepOperators):
        key = ops.g1.Z.tobytes() + ops.g0.Z.tobytes() + np.float64(ops.dt).tobytes()
        if key in self._cache:
            return self._cache[key]
        A = (np.diag(ops.g1.volumes) + 0.5 * ops.dt * self.eps * ops.gm.laplacian.toarray())
        B = np.diag(ops.gm.volumes)
        theta, X = sla.eigh(A, B)
        out = (theta, X, A, B)
        if ops.fixed:
            self._cache = {key: out}
        return out

    def solve(self, rhs: np.ndarray, ops: StepOperators) -> np.ndarray:
        """Solve the Crank-Nicolson system mode by mode in the configuration basis."""
        theta, X, A, B = self._spatial_eigen(ops)
        V = self.basis.vectors
        lam = self.basis.eigenvalues
        c = 0.5 * ops.dt * self.q_coeff
        rhs_modes = rhs @ V
        C = X @ ((X.T @ rhs_modes) / (theta[:, None] + c * lam[None, :]))
        res = A @ C + c * (B @ C) * lam[None, :] - rhs_modes
        scale = max(np.linalg.norm(rhs_modes), 1e-300)
        if not np.all(np.isfinite(C)) or np.linalg.norm(res) > self.residual_tol * scale:
            raise SolverDiverged(f"Fokker-Planck solve residual {np.linalg.norm(res) / scale:.3e}")
        return C @ V.T

    def positivity_margin(self, psi_hat: np.ndarray, ops: StepOperators, system: FPSystem) -> float:
        """Smallest relative diagonal of the explicit operator (>= 0 keeps psi_hat >= 0)."""
        W = self.grid.weights
        dt = ops.dt
        vol0 = ops.g0.volumes[:, None, None]
        volm = system.volumes_mid[:, None, None]
        dx = system.x_diffusion.diagonal()[:, None, None]
        dq = np.diag(self.Dq).reshape(self.grid.shape)[None]
        out_t = system.transport.diagonal()[:, None, None]
        s_out = np.zeros_like(psi_hat)
        s_out[:, :-1, :] += np.maximum(system.drag_radial, 0.0)
        s_out[:, 1:, :] += np.maximum(-system.drag_radial, 0.0)
        s_out += np.maximum(system.drag_angular, 0.0)
        s_out += np.roll(np.maximum(-system.drag_angular, 0.0), 1, axis=-1)
        diag = (vol0 * W - 0.5 * dt * self.eps * dx * W - 0.5 * dt * self.q_coeff * volm * dq
                - out_t * W - dt * volm * s_out)
        return float(np.min(diag / (vol0 * W)))

    def drag_power(self, psi_hat: np.ndarray, ops: StepOperators) -> float:
        """sum over cells of vol^{n+1/2} G : T^ell_1(psi_hat)."""
        g = psi_hat if np.isinf(self.ell) else cutoff_T(self.ell, psi_hat)
        T1 = face_jump_moment(g, self.grid)
        return float(np.sum(ops.gm.volumes * np.einsum("cab,cab->c", ops.gradients, T1)))

    def step(self, state: ConfigDensity, ops: StepOperators) -> tuple[ConfigDensity, StepRecord]:
        system = self.assemble(ops)
        psi0 = state.psi_hat
        margin = self.positivity_margin(psi0, ops, system)
        power = ops.dt * self.drag_power(psi0, ops)
        rhs = self.explicit_residual(psi0, ops, system)
        P1 = self.solve(rhs, ops)
        psi1 = P1.reshape(psi0.shape)
        half = 0.5 * (psi0 + psi1)
        p = self.model.params
        fx, fq = fisher_information(half, ops, self.grid, p.eps, p.A0, p.lam)
        W = self.grid.weights
        rec = StepRecord(
            t=state.t + ops.dt,
            entropy=relative_entropy(psi1, ops.g1.volumes, self.grid),
            fisher_x=ops.dt * fx,
            fisher_q=ops.dt * fq,
            drag_power=power,
            mass=float(np.sum(ops.g1.volumes * np.einsum("cij,ij->c", psi1, W))),
            min=float(psi1.min()),
            positivity_margin=margin,
        )
        return ConfigDensity(psi1, state.t + ops.dt), rec

    def initial_record(self, state: ConfigDensity, geom) -> StepRecord:
        W = self.grid.weights
        return StepRecord(state.t, relative_entropy(state.psi_hat, geom.volumes, self.grid), 0.0, 0.0, 0.0,
                          float(np.sum(geom.volumes * np.einsum("cij,ij->c", state.psi_hat, W))),
                          float(state.psi_hat.min()), np.inf)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


@dataclass
class EntropyReport:
    ok: bool
    worst_relative_slack: float
    worst_step: int
    min_psi: float


def entropy_dissipation_check(history: FPHistory, tol_ineq: float = 1e-3, raise_on_fail: bool = True
                              ) -> EntropyReport:
    """entropy(t) + Fisher accumulators <= entropy(0) + drag-power integral, relatively."""
    ent = history.column("entropy")
    fx = np.cumsum(history.column("fisher_x"))
    fq = np.cumsum(history.column("fisher_q"))
    power = np.cumsum(history.column("drag_power"))
    lhs = ent + fx + fq
    rhs = ent[0] + power
    slack = (lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)
    worst = int(np.argmax(slack))
    report = EntropyReport(bool(slack[worst] <= tol_ineq), float(slack[worst]), worst,
                           float(history.column("min").min()))
    if not report.ok and raise_on_fail:
        raise InequalityViolated("entropy inequality violated", step=worst,
                                 breakdown={"entropy": float(ent[worst]), "fisher_x": float(fx[worst]),
                                            "fisher_q": float(fq[worst]), "drag_power": float(power[worst]),
                                            "relative_slack": report.worst_relative_slack})
    return report


def minimum_principle_check(history: FPHistory, tol_neg: float = TOL_NEG, raise_on_fail: bool = True) -> bool:
    mins = history.column("min")
    bad = np.nonzero(mins < -tol_neg)[0]
    if bad.size and raise_on_fail:
        raise InequalityViolated("psi_hat fell below the minimum-principle tolerance", step=int(bad[0]),
                                 breakdown={"min": float(mins[bad[0]])})
    return not bad.size
