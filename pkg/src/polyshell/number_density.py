"""Polymer number density: marginal of the configuration density and its own
transport-diffusion solver with maximum-principle and renormalization checks.

The update is the same family as the Fokker-Planck one: Crank-Nicolson
diffusion with two-point fluxes and explicit upwind transport relative to the
moving mesh, so a marginalized Fokker-Planck state and a directly stepped
density see identical spatial operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InequalityViolated, SolverDiverged
from .polymer_model import ConfigGrid
from .spatial import MeshGeometry, StepOperators


@dataclass
class NumberDensity:
    values: np.ndarray  # per cell
    t: float = 0.0

    def sup(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0


def marginalize(psi_hat: np.ndarray, grid: ConfigGrid, t: float = 0.0) -> NumberDensity:
    """Xi = sum over configuration cells of M^m-mass times psi_hat."""
    return NumberDensity(np.einsum("...ij,ij->...", psi_hat, grid.weights), t)


@dataclass
class XiDiagnostics:
    times: list = field(default_factory=list)
    sup: list = field(default_factory=list)
    min: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    grad_integral: list = field(default_factory=list)  # running sum of dt * |grad Xi|^2
    snapshots: list = field(default_factory=list)  # (values, volumes)

    def record(self, xi: NumberDensity, geom: MeshGeometry, grad_integral: float, keep: bool = True):
        v = xi.values
        self.times.append(xi.t)
        self.sup.append(float(v.max()))
        self.min.append(float(v.min()))
        self.mass.append(float(np.sum(geom.volumes * v)))
        self.l2.append(float(np.sum(geom.volumes * v * v)))
        self.grad_integral.append(grad_integral)
        if keep:
            self.snapshots.append((v.copy(), geom.volumes.copy()))


class XiSolver:
    """Advances dXi/dt + v . grad Xi = eps Lap Xi with no-flux walls."""

    def __init__(self, eps: float, residual_tol: float = 1e-10):
        self.eps = eps
        self.residual_tol = residual_tol
        self._cache = {}

    def _solve(self, ops: StepOperators, rhs: np.ndarray) -> np.ndarray:
        dt, eps = ops.dt, self.eps
        key = ops.g1.Z.tobytes() if ops.fixed else None
        if key is not None and key in self._cache:
            solve, lhs = self._cache[key]
        else:
            lhs = (sp.diags(ops.g1.volumes) + 0.5 * dt * eps * ops.gm.laplacian).tocsc()
            solve = spla.factorized(lhs)
            if key is not None:
                self._cache = {key: (solve, lhs)}
        x = solve(rhs)
        res = np.linalg.norm(lhs @ x - rhs)
        if not np.isfinite(res) or res > self.residual_tol * max(np.linalg.norm(rhs), 1.0):
            raise SolverDiverged(f"number density solve residual {res:.3e}")
        return x

    def positivity_margin(self, ops: StepOperators) -> float:
        """Smallest diagonal of the explicit operator; nonnegative keeps the bounds."""
        diag = ops.g0.volumes - 0.5 * ops.dt * self.eps * ops.gm.laplacian.diagonal() - ops.outflow
        return float(np.min(diag / ops.g0.volumes))

    def step(self, xi: NumberDensity, ops: StepOperators) -> tuple[NumberDensity, float]:
        """Return the new density and dt * sum_f T (jump of Xi^{n+1/2})^2."""
        x0 = xi.values
        rhs = ops.g0.volumes * x0 - 0.5 * ops.dt * self.eps * (ops.gm.laplacian @ x0) - ops.upwind @ x0
        x1 = self._solve(ops, rhs)
        half = 0.5 * (x0 + x1)
        return NumberDensity(x1, xi.t + ops.dt), ops.dt * float(ops.gm.dirichlet_energy(half))


def energy_identity_residual(diag: XiDiagnostics, eps: float) -> float:
    """Relative defect of |Xi(t)|^2 + 2 eps int |grad Xi|^2 = |Xi_0|^2 (v = 0, fixed domain)."""
    l2 = np.asarray(diag.l2)
    acc = np.asarray(diag.grad_integral)
    return float(np.max(np.abs(l2 + 2.0 * eps * acc - l2[0])) / max(l2[0], 1e-300))


@dataclass
class RenormalizedReport:
    ok: bool
    worst_slack: float
    worst_step: int
    values: np.ndarray


def renormalized_check(diag: XiDiagnostics, theta, tol: float = 1e-10, raise_on_fail: bool = True
                       ) -> RenormalizedReport:
    """Check int theta(Xi(t)) <= int theta(Xi_0) for convex theta with theta(0) = 0."""
    vals = np.array([np.sum(vol * theta(v)) for v, vol in diag.snapshots])
    slack = vals - vals[0]
    scale = max(abs(vals[0]), 1e-300)
    worst = int(np.argmax(slack))
    ok = bool(slack[worst] <= tol * scale)
    report = RenormalizedReport(ok, float(slack[worst] / scale), worst, vals)
    if not ok and raise_on_fail:
        raise InequalityViolated("renormalized functional increased", step=worst,
                                 breakdown={"slack": report.worst_slack})
    return report


def max_principle_check(diag: XiDiagnostics, tol_max: float = 1e-6, raise_on_fail: bool = True) -> bool:
    bound = diag.sup[0] * (1.0 + tol_max)
    bad = [i for i, s in enumerate(diag.sup) if s > bound]
    low = [i for i, s in enumerate(diag.min) if s < -1e-10]
    ok = not bad and not low
    if not ok and raise_on_fail:
        step = (bad or low)[0]
        raise InequalityViolated("number density left its bounds", step=step,
                                 breakdown={"sup": diag.sup[step], "bound": bound, "min": diag.min[step]})
    return ok
