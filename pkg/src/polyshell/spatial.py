"""Moving finite-volume mesh on the slab, shared by the density solvers.

Reference cells are the rectangles of an ``nx x nz`` grid on
``[0, 1) x (0, H)``, periodic in x.  The tube map moves every vertex
vertically by ``eta_i beta((z_k - H)/L)``, so cells become trapezoids with
vertical sides.  Cell ``(i, k)`` is flattened to ``i * nz + k``.

Transport fluxes come from a stream function sampled at vertices: the flux
through a segment is the difference of the stream function at its ends,
which makes every discrete velocity exactly divergence free.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .geometry import beta


@dataclass(frozen=True)
class SlabMesh:
    nx: int = 16
    nz: int = 8
    height: float = 1.0
    half_width: float = 0.5

    @property
    def h(self) -> float:
        return 1.0 / self.nx

    @property
    def ncells(self) -> int:
        return self.nx * self.nz

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.h

    @cached_property
    def z_ref(self) -> np.ndarray:
        return np.linspace(0.0, self.height, self.nz + 1)

    @cached_property
    def profile(self) -> np.ndarray:
        """beta at each vertex row; zero outside the tube, one on the shell."""
        s = (self.z_ref - self.height) / self.half_width
        return np.where(s > -1.0, beta(np.maximum(s, -1.0)), 0.0)

    def geometry(self, eta_vertices) -> "MeshGeometry":
        eta = np.asarray(eta_vertices, dtype=float).reshape(self.nx)
        Z = self.z_ref[None, :] + eta[:, None] * self.profile[None, :]
        return MeshGeometry(self, Z)

    def reference(self) -> "MeshGeometry":
        return self.geometry(np.zeros(self.nx))

    def cell_index(self, i, k):
        return (np.asarray(i) % self.nx) * self.nz + np.asarray(k)


@dataclass
class MeshGeometry:
    mesh: SlabMesh
    Z: np.ndarray  # vertex heights (nx, nz + 1)

    @cached_property
    def _Zr(self) -> np.ndarray:
        """Heights at the right-hand vertical edge of each column."""
        return np.roll(self.Z, -1, axis=0)

    @cached_property
    def volumes(self) -> np.ndarray:
        dzl = np.diff(self.Z, axis=1)
        dzr = np.diff(self._Zr, axis=1)
        return (0.5 * self.mesh.h * (dzl + dzr)).ravel()

    @cached_property
    def centers(self) -> np.ndarray:
        """Approximate centroids (mean of the four vertices), shape (ncells, 2)."""
        m = self.mesh
        zc = 0.25 * (self.Z[:, :-1] + self.Z[:, 1:] + self._Zr[:, :-1] + self._Zr[:, 1:])
        xc = np.broadcast_to((m.x + 0.5 * m.h)[:, None], zc.shape)
        return np.stack([xc.ravel(), zc.ravel()], axis=-1)

    @cached_property
    def total_volume(self) -> float:
        return float(np.sum(self.volumes))

    @cached_property
    def top(self) -> np.ndarray:
        return self.Z[:, -1]

    # -- two-point flux transmissibilities ---------------------------------

    @cached_property
    def x_faces(self):
        """Faces at x_i between cells (i-1, k) and (i, k): (left, right, T)."""
        m = self.mesh
        i, k = np.meshgrid(np.arange(m.nx), np.arange(m.nz), indexing="ij")
        left = m.cell_index(i - 1, k).ravel()
        right = m.cell_index(i, k).ravel()
        length = np.diff(self.Z, axis=1).ravel()
        c = self.centers
        d = c[right] - c[left]
        d[:, 0] = np.where(d[:, 0] < 0, d[:, 0] + 1.0, d[:, 0])  # periodic wrap
        T = length * d[:, 0] / np.sum(d * d, axis=1)
        return left, right, T

    @cached_property
    def z_faces(self):
        """Interior faces between (i, k-1) and (i, k): (below, above, T)."""
        m = self.mesh
        i, k = np.meshgrid(np.arange(m.nx), np.arange(1, m.nz), indexing="ij")
        below = m.cell_index(i, k - 1).ravel()
        above = m.cell_index(i, k).ravel()
        dz = (self._Zr[:, 1:-1] - self.Z[:, 1:-1]).ravel()
        # segment from left to right vertex; upward normal (-dz, h) / length
        normal = np.stack([-dz, np.full_like(dz, m.h)], axis=-1)
        c = self.centers
        d = c[above] - c[below]
        T = np.sum(normal * d, axis=1) / np.sum(d * d, axis=1)
        return below, above, T

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Symmetric positive semidefinite TPFA matrix with no-flux boundaries."""
        n = self.mesh.ncells
        rows, cols, vals = [], [], []
        for a, b, T in (self.x_faces, self.z_faces):
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [T, T, -T, -T]
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    def dirichlet_energy(self, f: np.ndarray) -> float:
        """Sum over faces of T (f_b - f_a)^2, last axes of f are cells."""
        out = 0.0
        for a, b, T in (self.x_faces, self.z_faces):
            out = out + np.sum(T * (f[..., b] - f[..., a]) ** 2, axis=-1)
        return out

    def min_transmissibility(self) -> float:
        return float(min(self.x_faces[2].min(), self.z_faces[2].min() if self.mesh.nz > 1 else np.inf))


def midpoint_geometry(g0: MeshGeometry, g1: MeshGeometry) -> MeshGeometry:
    return MeshGeometry(g0.mesh, 0.5 * (g0.Z + g1.Z))


# ---------------------------------------------------------------------------
# fluxes from stream functions
# ---------------------------------------------------------------------------


@dataclass
class FaceFluxes:
    """Volumes moved across every face during one step, relative to the mesh.

    ``x``: through x-faces from left to right cell, same order as
    ``MeshGeometry.x_faces``; ``z``: through interior z-faces, upward.
    """

    x: np.ndarray
    z: np.ndarray

    def divergence(self, mesh: SlabMesh, geom: MeshGeometry) -> np.ndarray:
        out = np.zeros(mesh.ncells)
        a, b, _ = geom.x_faces
        np.add.at(out, a, self.x)
        np.add.at(out, b, -self.x)
        a, b, _ = geom.z_faces
        np.add.at(out, a, self.z)
        np.add.at(out, b, -self.z)
        return out


def swept_volumes(g0: MeshGeometry, g1: MeshGeometry) -> np.ndarray:
    """Upward volume swept by every horizontal vertex row segment, (nx, nz + 1)."""
    dZ = g1.Z - g0.Z
    return 0.5 * g0.mesh.h * (dZ + np.roll(dZ, -1, axis=0))


def boundary_compatible_stream(psi: np.ndarray, g0: MeshGeometry, g1: MeshGeometry, dt: float,
                               tol: float = 1e-12) -> np.ndarray:
    """Correct vertex stream values so the top row carries exactly the swept volume.

    The bottom row is pinned at zero.  The top row is replaced by the unique
    (up to a constant, chosen to minimize the correction) values whose
    differences reproduce the swept volume of the shell, and the correction is
    blended linearly in height into the interior.
    """
    swept = swept_volumes(g0, g1)[:, -1] / dt
    total = np.sum(swept)
    scale = max(np.sum(np.abs(swept)), 1.0)
    if abs(total) > tol * scale:
        raise ValueError(f"shell motion changes the enclosed volume (net rate {total:.3e})")
    target = -np.concatenate([[0.0], np.cumsum(swept[:-1])])
    raw = psi[:, -1]
    target = target + np.mean(raw - target)
    gm = midpoint_geometry(g0, g1)
    frac = (gm.Z - gm.Z[:, :1]) / (gm.Z[:, -1:] - gm.Z[:, :1])
    out = psi + frac * (target - raw)[:, None]
    out[:, 0] = 0.0
    return out


def fluxes_from_stream(psi: np.ndarray, g0: MeshGeometry, g1: MeshGeometry, dt: float) -> FaceFluxes:
    """Relative face volumes over a step from corrected vertex stream values."""
    fx = (psi[:, 1:] - psi[:, :-1]).ravel() * dt
    fz_all = (psi - np.roll(psi, -1, axis=0)) * dt - swept_volumes(g0, g1)
    fz = fz_all[:, 1:-1].ravel()
    return FaceFluxes(fx, fz)


def upwind_operator(fluxes: FaceFluxes, geom: MeshGeometry) -> sp.csr_matrix:
    """Matrix A with (A f)_c = net outflow of f from cell c by first-order upwinding."""
    n = geom.mesh.ncells
    rows, cols, vals = [], [], []
    for (a, b, _), F in ((geom.x_faces, fluxes.x), (geom.z_faces, fluxes.z)):
        pos = F > 0
        up = np.where(pos, a, b)
        rows += [a, b]
        cols += [up, up]
        vals += [F, -F]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


# ---------------------------------------------------------------------------
# transport velocities
# ---------------------------------------------------------------------------


class TransportField:
    """Velocity seen by the densities: stream values at vertices and cell gradients."""

    def stream(self, geom: MeshGeometry, t: float) -> np.ndarray:
        raise NotImplementedError

    def cell_gradients(self, geom: MeshGeometry, t: float) -> np.ndarray:
        raise NotImplementedError


class ZeroFlow(TransportField):
    def stream(self, geom, t):
        return np.zeros_like(geom.Z)

    def cell_gradients(self, geom, t):
        return np.zeros((geom.mesh.ncells, 2, 2))


@dataclass
class ShearFlow(TransportField):
    """u = (rate z, 0): stream function rate z^2 / 2."""

    rate: float = 1.0

    def stream(self, geom, t):
        return 0.5 * self.rate * geom.Z**2

    def cell_gradients(self, geom, t):
        g = np.zeros((geom.mesh.ncells, 2, 2))
        g[:, 0, 1] = self.rate
        return g


_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)


@dataclass
class PointwiseFlow(TransportField):
    """Velocity given by callables of (points, t); stream by vertical integration."""

    velocity: object
    gradient: object

    def stream(self, geom, t):
        m = geom.mesh
        za, zb = geom.Z[:, :-1], geom.Z[:, 1:]
        half = 0.5 * (zb - za)
        mid = 0.5 * (zb + za)
        zq = mid[..., None] + half[..., None] * _GL3_X
        xq = np.broadcast_to(m.x[:, None, None], zq.shape)
        pts = np.stack([xq.ravel(), zq.ravel()], axis=-1)
        ux = np.asarray(self.velocity(pts, t))[:, 0].reshape(zq.shape)
        seg = half * np.sum(_GL3_W * ux, axis=-1)
        return np.concatenate([np.zeros((m.nx, 1)), np.cumsum(seg, axis=1)], axis=1)

    def cell_gradients(self, geom, t):
        return np.asarray(self.gradient(geom.centers, t), dtype=float).reshape(-1, 2, 2)


def deviatoric(G: np.ndarray) -> np.ndarray:
    tr = np.trace(G, axis1=-2, axis2=-1)
    return G - 0.5 * tr[..., None, None] * np.eye(2)


@dataclass
class StepOperators:
    """Everything a density update needs for one step between two geometries."""

    g0: MeshGeometry
    g1: MeshGeometry
    gm: MeshGeometry
    fluxes: FaceFluxes
    upwind: sp.csr_matrix
    gradients: np.ndarray  # deviatoric cell-averaged velocity gradients
    dt: float
    fixed: bool

    @property
    def outflow(self) -> np.ndarray:
        """Total volume leaving each cell during the step."""
        return self.upwind.diagonal()


def prepare_step(g0: MeshGeometry, g1: MeshGeometry, flow: TransportField, t: float,
                 dt: float) -> StepOperators:
    fixed = bool(np.array_equal(g0.Z, g1.Z))
    gm = g0 if fixed else midpoint_geometry(g0, g1)
    psi = flow.stream(gm, t + 0.5 * dt)
    psi = boundary_compatible_stream(psi, g0, g1, dt)
    fluxes = fluxes_from_stream(psi, g0, g1, dt)
    A = upwind_operator(fluxes, gm)
    G = deviatoric(flow.cell_gradients(gm, t + 0.5 * dt))
    return StepOperators(g0, g1, gm, fluxes, A, G, dt, fixed)
