"""Kramers elastic stress in force-law, gradient and truncated forms.

Densities are nodal values ``psi_hat[..., nr, ntheta]`` on a
:class:`~polyshell.polymer_model.ConfigGrid`; leading axes index spatial cells.

* force-law form: quadrature of ``psi_hat F(q) (x) q`` against the Maxwellian.
* spectral gradient form: ``M grad_q psi_hat (x) q``, with the q-gradient taken
  spectrally (Fourier in angle, polynomial along full diameters in r).
* finite-volume gradient form: the piecewise-constant density has jumps on
  the cell faces, so the gradient moment is a sum of face moments times
  jumps.  This is the form that pairs exactly with the discrete drag.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .polymer_model import GAMMA_INTEGRAL, ConfigGrid, PolymerModel, cutoff_T


@dataclass
class StressField:
    """Total stress with its decomposition; shapes ``(n, 2, 2)`` and ``(n,)``."""

    total: np.ndarray
    spring: np.ndarray  # per-spring moments, (n, K, 2, 2), before the factor k
    isotropic: np.ndarray  # scalar coefficient of I

    @property
    def deviatoric(self) -> np.ndarray:
        tr = np.trace(self.total, axis1=-2, axis2=-1)
        return self.total - 0.5 * tr[..., None, None] * np.eye(2)


def _assemble(spring: np.ndarray, isotropic: np.ndarray, k: float) -> StressField:
    total = k * spring.sum(axis=-3) + isotropic[..., None, None] * np.eye(2)
    return StressField(total=total, spring=spring, isotropic=isotropic)


def number_density(psi_hat: np.ndarray, grid: ConfigGrid) -> np.ndarray:
    return np.einsum("...ij,ij->...", psi_hat, grid.exact_weights)


def force_moment(psi_hat: np.ndarray, grid: ConfigGrid) -> np.ndarray:
    """Sum over nodes of W psi_hat F(q) (x) q."""
    fq = np.einsum("ija,ijb->ijab", grid.law.force(grid.q), grid.q)
    return np.einsum("...ij,ij,ijab->...ab", psi_hat, grid.exact_weights, fq)


def kramers_stress(psi_hat: np.ndarray, xi: np.ndarray | None, model: PolymerModel,
                   grid: ConfigGrid) -> StressField:
    """Force-law form with isotropic part -k(K+1) Xi - eth Xi^2."""
    if xi is None:
        xi = number_density(psi_hat, grid)
    p = model.params
    K = model.law.K
    spring = force_moment(psi_hat, grid)[..., None, :, :]
    iso = -p.k * (K + 1) * xi - p.eth * xi**2
    return _assemble(spring, np.asarray(iso, dtype=float), p.k)


# ---------------------------------------------------------------------------
# spectral gradient form
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _diameter_matrix(nodes: tuple) -> np.ndarray:
    """Barycentric differentiation matrix on the given nodes."""
    x = np.asarray(nodes)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # weights scaled to avoid overflow: use log-magnitudes
    logw = -np.sum(np.log(np.abs(diff)), axis=1)
    sign = np.prod(np.sign(diff), axis=1)
    w = sign * np.exp(logw - logw.max())
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def spectral_q_gradient(psi_hat: np.ndarray, grid: ConfigGrid) -> np.ndarray:
    """Cartesian q-gradient at the nodes, shape ``(..., nr, ntheta, 2)``."""
    nr, nt = grid.shape
    half = nt // 2
    x = np.concatenate([-grid.r[::-1], grid.r])
    D = _diameter_matrix(tuple(x))
    # diameter through theta_j and theta_j + pi, for j < half
    fwd = psi_hat[..., :, :half]
    bwd = psi_hat[..., ::-1, half:]
    line = np.concatenate([bwd, fwd], axis=-2)
    dline = np.einsum("ab,...bj->...aj", D, line)
    d_r = np.empty_like(psi_hat)
    d_r[..., :, :half] = dline[..., nr:, :]
    d_r[..., :, half:] = -dline[..., :nr, :][..., ::-1, :]
    k = np.fft.fftfreq(nt, d=1.0 / nt)
    k[half] = 0.0
    d_t = np.real(np.fft.ifft(1j * k * np.fft.fft(psi_hat, axis=-1), axis=-1))
    c, s = np.cos(grid.theta), np.sin(grid.theta)
    inv_r = (1.0 / grid.r)[:, None]
    gx = d_r * c - d_t * inv_r * s
    gy = d_r * s + d_t * inv_r * c
    return np.stack([gx, gy], axis=-1)


def gradient_moment_spectral(psi_hat: np.ndarray, grid: ConfigGrid) -> np.ndarray:
    """Sum over nodes of W grad psi_hat (x) q."""
    grad = spectral_q_gradient(psi_hat, grid)
    return np.einsum("...ija,ij,ijb->...ab", grad, grid.exact_weights, grid.q)


def gradient_form_stress(psi_hat: np.ndarray, xi: np.ndarray | None, model: PolymerModel,
                         grid: ConfigGrid) -> StressField:
    """Gradient form with isotropic part -k Xi - eth Xi^2."""
    if xi is None:
        xi = number_density(psi_hat, grid)
    p = model.params
    spring = gradient_moment_spectral(psi_hat, grid)[..., None, :, :]
    iso = -p.k * xi - p.eth * xi**2
    return _assemble(spring, np.asarray(iso, dtype=float), p.k)


# ---------------------------------------------------------------------------
# finite-volume gradient form and truncation
# ---------------------------------------------------------------------------


def face_jump_moment(g: np.ndarray, grid: ConfigGrid) -> np.ndarray:
    """Sum over interior faces of S_f (g_out - g_in) for nodal g."""
    radial, angular = grid.face_moments
    jr = np.diff(g, axis=-2)
    ja = np.roll(g, -1, axis=-1) - g
    return (np.einsum("...fj,fjab->...ab", jr, radial)
            + np.einsum("...ij,ijab->...ab", ja, angular))


def truncated_moment(psi_hat: np.ndarray, grid: ConfigGrid, ell: float = np.inf) -> np.ndarray:
    g = psi_hat if np.isinf(ell) else cutoff_T(ell, psi_hat)
    return face_jump_moment(g, grid)


def truncated_stress(psi_hat: np.ndarray, xi: np.ndarray | None, model: PolymerModel,
                     grid: ConfigGrid, ell: float = np.inf) -> StressField:
    """Finite-volume gradient form with psi_hat replaced by T_ell(psi_hat)."""
    if xi is None:
        xi = number_density(psi_hat, grid)
    p = model.params
    spring = truncated_moment(psi_hat, grid, ell)[..., None, :, :]
    iso = -p.k * xi - p.eth * xi**2
    return _assemble(spring, np.asarray(iso, dtype=float), p.k)


def truncation_constant(grid: ConfigGrid) -> float:
    """C with |T^ell| <= C ell (Frobenius) for every nonnegative density.

    T_ell takes values in [0, 1.5 ell], so each jump is at most 1.5 ell and the
    bound is 1.5 times the summed Frobenius norms of the face moments.
    """
    radial, angular = grid.face_moments
    total = np.sum(np.linalg.norm(radial, axis=(-2, -1))) + np.sum(np.linalg.norm(angular, axis=(-2, -1)))
    return GAMMA_INTEGRAL * float(total)


# ---------------------------------------------------------------------------
# drag power
# ---------------------------------------------------------------------------


def drag_power(T: StressField | np.ndarray, grad_v: np.ndarray, volumes: np.ndarray) -> float:
    """Cell-quadrature of T : grad v; grad_v[..., a, b] = d v_a / d x_b."""
    tensor = T.total if isinstance(T, StressField) else T
    return float(np.sum(volumes * np.einsum("...ab,...ab->...", tensor, grad_v)))
