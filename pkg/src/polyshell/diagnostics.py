"""Energy and entropy bookkeeping shared by the solvers and the coupler."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .spatial import MeshGeometry, swept_volumes

CSV_SCHEMA_VERSION = 1


@dataclass
class EnergyBreakdown:
    """Terms of the energy functional at one time plus running integrals.

    ``energy`` is the sum of the six state terms.  ``xi_l2_half`` is half the
    squared L2 norm of the number density: it is the quantity whose decay
    pays for ``grad_xi`` and is tracked separately from the functional.
    """

    t: float = 0.0
    kinetic: float = 0.0
    shell_kinetic: float = 0.0
    koiter: float = 0.0
    regularizer: float = 0.0
    xi_sup_sq: float = 0.0
    relative_entropy: float = 0.0
    viscous: float = 0.0  # int mu |grad u|^2
    grad_xi: float = 0.0  # int eps |grad Xi|^2
    fisher_x: float = 0.0
    fisher_q: float = 0.0
    fluid_work: float = 0.0
    shell_work: float = 0.0
    xi_l2_half: float = 0.0
    stress_work: float = 0.0  # work of the polymer stress on the fluid
    drag_power: float = 0.0  # k times the drag power seen by the densities
    numerical: float = 0.0  # energy removed by the end-of-step projection minus mesh defects

    STATE = ("kinetic", "shell_kinetic", "koiter", "regularizer", "xi_sup_sq", "relative_entropy")
    DISSIPATION = ("viscous", "grad_xi", "fisher_x", "fisher_q")

    @property
    def energy(self) -> float:
        return float(sum(getattr(self, n) for n in self.STATE))

    @property
    def dissipation(self) -> float:
        return float(sum(getattr(self, n) for n in self.DISSIPATION))

    @property
    def work(self) -> float:
        return self.fluid_work + self.shell_work

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, n) for n in self.STATE + self.DISSIPATION)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(f.name for f in fields(cls)) + ",energy"

    def csv_row(self) -> str:
        vals = [repr(float(v)) for v in asdict(self).values()]
        return ",".join(vals + [repr(self.energy)])


def csv_schema_line() -> str:
    return f"# polyshell-diagnostics schema={CSV_SCHEMA_VERSION}"


def assemble_breakdown(t: float, kinetic: float, shell_velocity: np.ndarray, koiter: float,
                       rho_regularizer: float, xi: np.ndarray, volumes: np.ndarray,
                       psi_hat: np.ndarray, entropy_weights: np.ndarray, k: float,
                       previous: EnergyBreakdown | None = None, entropy_value: float | None = None,
                       **increments) -> EnergyBreakdown:
    """Evaluate the state terms and add per-step increments to the accumulators.

    ``increments`` may contain any of the accumulator names; they are added
    to the running values of ``previous``.  When ``psi_hat`` is None the
    entropy integral (without the factor k) is taken from ``entropy_value``.
    """
    from .polymer_model import entropy

    V = np.asarray(shell_velocity, dtype=float)
    if psi_hat is None:
        ent = float(entropy_value)
    else:
        vals = entropy(np.maximum(psi_hat, 0.0))
        ent = float(np.sum(volumes * np.einsum("cij,ij->c", vals, entropy_weights)))
    out = EnergyBreakdown(
        t=t,
        kinetic=kinetic,
        shell_kinetic=0.5 * float(np.mean(V**2)) if V.size else 0.0,
        koiter=koiter,
        regularizer=rho_regularizer,
        xi_sup_sq=float(np.max(xi)) ** 2 if xi.size else 0.0,
        relative_entropy=k * ent,
        xi_l2_half=0.5 * float(np.sum(volumes * xi * xi)),
    )
    acc = ("viscous", "grad_xi", "fisher_x", "fisher_q", "fluid_work", "shell_work", "stress_work",
           "drag_power", "numerical")
    for name in acc:
        base = getattr(previous, name) if previous is not None else 0.0
        setattr(out, name, base + float(increments.get(name, 0.0)))
    unknown = set(increments) - set(acc)
    if unknown:
        raise KeyError(f"unknown increments {sorted(unknown)}")
    return out


def reynolds_check(values: list, geoms: list[MeshGeometry], dt: float) -> np.ndarray:
    """Per-step residual of d/dt int v - int dv/dt - boundary flux of v.

    ``values`` holds cell values at every time level and ``geoms`` the
    matching meshes.  The time derivative of the integral is a difference of
    cell integrals, the integral of the time derivative uses midpoint
    volumes, and the boundary term is the volume swept by the top boundary
    times the midpoint value in the adjacent cell.
    """
    out = []
    for n in range(len(values) - 1):
        g0, g1 = geoms[n], geoms[n + 1]
        v0, v1 = np.asarray(values[n], float), np.asarray(values[n + 1], float)
        vm = 0.5 * (g0.volumes + g1.volumes)
        lhs = (np.sum(g1.volumes * v1) - np.sum(g0.volumes * v0)) / dt
        inner = np.sum(vm * (v1 - v0)) / dt
        nz = g0.mesh.nz
        top_cells = np.arange(g0.mesh.nx) * nz + nz - 1
        swept = swept_volumes(g0, g1)[:, -1]
        bnd = np.sum(swept * 0.5 * (v0 + v1)[top_cells]) / dt
        out.append(lhs - inner - bnd)
    return np.asarray(out)
