"""Reference shell, deformed-surface quantities and the tube diffeomorphism.

The middle surface is sampled on a periodic grid over the flat torus
``[0, l1) x [0, l2)``.  Tangential derivatives of scalar fields on that grid
are spectral; derivatives of the reference parameterization are supplied
analytically by the constructors below.

The domain map is implemented for the slab geometry used by the coupled
solver: a flat shell at height ``H`` bounding ``torus x (0, H)`` from above,
with the normal pointing in +z.  In that setting the closest-point
projection is explicit, which is what makes an exact Newton inverse cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityViolation, SolverDiverged

# ---------------------------------------------------------------------------
# periodic spectral calculus
# ---------------------------------------------------------------------------


def _wavenumbers(n: int, length: float, odd_order: bool) -> np.ndarray:
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)
    if odd_order and n % 2 == 0:
        # the Nyquist mode has no real odd derivative; dropping it keeps the
        # first-derivative matrix exactly skew-symmetric
        k[n // 2] = 0.0
    return k


def periodic_derivative(f: np.ndarray, axis: int, length: float = 1.0, order: int = 1) -> np.ndarray:
    """Spectral derivative of a real periodic grid function along ``axis``."""
    n = f.shape[axis]
    if n == 1:
        return np.zeros_like(f, dtype=float)
    k = _wavenumbers(n, length, odd_order=order % 2 == 1)
    shape = [1] * f.ndim
    shape[axis] = n
    symbol = (1j * k.reshape(shape)) ** order
    return np.real(np.fft.ifft(symbol * np.fft.fft(f, axis=axis), axis=axis))


def surface_gradient(eta: np.ndarray, lengths=(1.0, 1.0)) -> np.ndarray:
    """Return ``(2, n1, n2)`` array of first derivatives."""
    return np.stack([periodic_derivative(eta, a, lengths[a]) for a in (0, 1)])


def surface_hessian(eta: np.ndarray, lengths=(1.0, 1.0)) -> np.ndarray:
    """Return ``(2, 2, n1, n2)``; built as D_i D_j so it is the exact adjoint pair."""
    grad = surface_gradient(eta, lengths)
    hess = np.empty((2, 2) + eta.shape)
    for i in range(2):
        for j in range(2):
            hess[i, j] = periodic_derivative(grad[j], i, lengths[i])
    return hess


def _cardinal(x: np.ndarray, n: int, length: float) -> np.ndarray:
    """Periodic trigonometric cardinal function evaluated at offsets ``x``."""
    if n == 1:
        return np.ones_like(x)
    theta = 2.0 * np.pi * x / length
    out = np.ones_like(theta)
    kmax = (n - 1) // 2
    for k in range(1, kmax + 1):
        out += 2.0 * np.cos(k * theta)
    if n % 2 == 0:
        out += np.cos((n // 2) * theta)
    return out / n


def fourier_interpolate(values: np.ndarray, points: np.ndarray, lengths=(1.0, 1.0)) -> np.ndarray:
    """Evaluate the trigonometric interpolant of a grid function at points.

    ``values`` has shape ``(n1, n2)``; ``points`` has shape ``(m, 2)`` or
    ``(m,)`` when the second direction is trivial.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n1, n2 = values.shape
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.ndim == 1:
        pts = np.column_stack([pts, np.zeros_like(pts)])
    y1 = np.arange(n1) * lengths[0] / n1
    y2 = np.arange(n2) * lengths[1] / n2
    s1 = _cardinal(pts[:, :1] - y1[None, :], n1, lengths[0])
    s2 = _cardinal(pts[:, 1:2] - y2[None, :], n2, lengths[1])
    return np.einsum("mj,mk,jk->m", s1, s2, values)


# ---------------------------------------------------------------------------
# tube profile
# ---------------------------------------------------------------------------

_BETA_LO, _BETA_HI = -0.75, -0.25


def beta(s):
    """Septic smoothstep: 0 on [-1, -0.75], 1 on [-0.25, 0], C^3 overall."""
    t = np.clip((np.asarray(s, dtype=float) - _BETA_LO) / (_BETA_HI - _BETA_LO), 0.0, 1.0)
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def beta_prime(s):
    s = np.asarray(s, dtype=float)
    width = _BETA_HI - _BETA_LO
    t = np.clip((s - _BETA_LO) / width, 0.0, 1.0)
    return 140.0 * t**3 * (1.0 - t) ** 3 / width


BETA_PRIME_MAX = 140.0 / 64.0 / (_BETA_HI - _BETA_LO)


# ---------------------------------------------------------------------------
# reference shell and shell state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceShell:
    """Sampled middle surface with analytic derivatives.

    Arrays are indexed ``[..., i1, i2, component]``; derivative indices come
    first, e.g. ``d_phi[a]`` is the derivative along the a-th coordinate.
    """

    phi: np.ndarray
    d_phi: np.ndarray
    dd_phi: np.ndarray
    nu: np.ndarray
    d_nu: np.ndarray
    dd_nu: np.ndarray
    half_width: float  # L
    coercivity_width: float  # L tilde
    lengths: tuple = (1.0, 1.0)
    height: float | None = None  # only for flat slab shells
    kind: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.half_width <= self.coercivity_width:
            raise ValueError("need 0 < L <= L_tilde")
        cross = np.cross(self.d_phi[0], self.d_phi[1])
        if np.min(np.linalg.norm(cross, axis=-1)) <= 0.0:
            raise ValueError("tangent vectors are linearly dependent somewhere")
        if np.max(np.abs(np.linalg.norm(self.nu, axis=-1) - 1.0)) > 1e-12:
            raise ValueError("reference normal is not unit length")

    @property
    def shape(self) -> tuple:
        return self.phi.shape[:2]

    @property
    def area_element(self) -> np.ndarray:
        """|d1 phi x d2 phi| at every node."""
        return np.linalg.norm(np.cross(self.d_phi[0], self.d_phi[1]), axis=-1)

    @property
    def metric(self) -> np.ndarray:
        """Covariant metric a_ab, shape (2, 2, n1, n2)."""
        return np.einsum("a...k,b...k->ab...", self.d_phi, self.d_phi)

    def node_coordinates(self) -> np.ndarray:
        n1, n2 = self.shape
        y1 = np.arange(n1) * self.lengths[0] / n1
        y2 = np.arange(n2) * self.lengths[1] / n2
        return np.stack(np.meshgrid(y1, y2, indexing="ij"), axis=-1)


def flat_shell(n1: int, n2: int = 1, height: float = 1.0, half_width: float = 0.5,
               coercivity_width: float | None = None, lengths=(1.0, 1.0)) -> ReferenceShell:
    """Plane z = height over the torus, normal +z."""
    y = np.stack(np.meshgrid(np.arange(n1) * lengths[0] / n1, np.arange(n2) * lengths[1] / n2,
                             indexing="ij"), axis=-1)
    phi = np.concatenate([y, np.full(y.shape[:2] + (1,), height)], axis=-1)
    d_phi = np.zeros((2,) + phi.shape)
    d_phi[0, ..., 0] = 1.0
    d_phi[1, ..., 1] = 1.0
    nu = np.zeros_like(phi)
    nu[..., 2] = 1.0
    return ReferenceShell(phi=phi, d_phi=d_phi, dd_phi=np.zeros((2, 2) + phi.shape), nu=nu,
                          d_nu=np.zeros((2,) + phi.shape), dd_nu=np.zeros((2, 2) + phi.shape),
                          half_width=half_width,
                          coercivity_width=coercivity_width if coercivity_width else half_width,
                          lengths=tuple(lengths), height=height, kind="flat")


def torus_shell(n1: int, n2: int, major: float = 2.0, minor: float = 1.0,
                half_width: float = 0.25) -> ReferenceShell:
    """Torus of revolution parameterized over the unit flat torus."""
    w = 2.0 * np.pi
    y1, y2 = np.meshgrid(np.arange(n1) / n1, np.arange(n2) / n2, indexing="ij")
    c1, s1, c2, s2 = np.cos(w * y1), np.sin(w * y1), np.cos(w * y2), np.sin(w * y2)
    zero = np.zeros_like(y1)
    ring = np.stack([c1, s1, zero], -1)
    d1_ring = w * np.stack([-s1, c1, zero], -1)
    d11_ring = -w * w * ring
    n = np.stack([c2 * c1, c2 * s1, s2], -1)
    d_n = np.stack([w * np.stack([-c2 * s1, c2 * c1, zero], -1),
                    w * np.stack([-s2 * c1, -s2 * s1, c2], -1)])
    dd_n = np.empty((2, 2) + n.shape)
    dd_n[0, 0] = -w * w * np.stack([c2 * c1, c2 * s1, zero], -1)
    dd_n[0, 1] = dd_n[1, 0] = w * w * np.stack([s2 * s1, -s2 * c1, zero], -1)
    dd_n[1, 1] = -w * w * n
    phi = major * ring + minor * n
    d_phi = minor * d_n
    d_phi[0] += major * d1_ring
    dd_phi = minor * dd_n
    dd_phi[0, 0] += major * d11_ring
    sign = _orientation(d_phi, n)
    return ReferenceShell(phi=phi, d_phi=d_phi, dd_phi=dd_phi, nu=sign * n, d_nu=sign * d_n,
                          dd_nu=sign * dd_n, half_width=half_width, coercivity_width=half_width,
                          kind="torus")


def sphere_patch(n1: int, n2: int, radius: float = 1.0, lon=(0.0, 1.0), lat=(-0.6, 0.6),
                 half_width: float = 0.25) -> ReferenceShell:
    """Longitude/latitude patch of a sphere; not periodic, use with constant fields only."""
    b = lon[0] + (lon[1] - lon[0]) * np.arange(n1) / n1
    a = lat[0] + (lat[1] - lat[0]) * np.arange(n2) / n2
    bb, aa = np.meshgrid(b, a, indexing="ij")
    ca, sa, cb, sb = np.cos(aa), np.sin(aa), np.cos(bb), np.sin(bb)
    zero = np.zeros_like(aa)
    phi = radius * np.stack([ca * cb, ca * sb, sa], -1)
    d_phi = radius * np.stack([np.stack([-ca * sb, ca * cb, zero], -1),
                               np.stack([-sa * cb, -sa * sb, ca], -1)])
    dd_phi = np.empty((2, 2) + phi.shape)
    dd_phi[0, 0] = radius * np.stack([-ca * cb, -ca * sb, zero], -1)
    dd_phi[0, 1] = dd_phi[1, 0] = radius * np.stack([sa * sb, -sa * cb, zero], -1)
    dd_phi[1, 1] = -phi
    sign = _orientation(d_phi, phi / radius)
    return ReferenceShell(phi=phi, d_phi=d_phi, dd_phi=dd_phi, nu=sign * phi / radius,
                          d_nu=sign * d_phi / radius, dd_nu=sign * dd_phi / radius,
                          half_width=half_width, coercivity_width=half_width,
                          lengths=(lon[1] - lon[0], lat[1] - lat[0]), kind="sphere-patch")


def _orientation(d_phi: np.ndarray, normal: np.ndarray) -> float:
    cross = np.cross(d_phi[0], d_phi[1])
    return 1.0 if np.sum(cross * normal) > 0 else -1.0


@dataclass
class ShellState:
    """Displacement along the normal and its rate on the shell grid."""

    eta: np.ndarray
    eta_t: np.ndarray
    t: float = 0.0

    @classmethod
    def rest(cls, shape) -> "ShellState":
        return cls(np.zeros(shape), np.zeros(shape), 0.0)

    def copy(self) -> "ShellState":
        return ShellState(self.eta.copy(), self.eta_t.copy(), self.t)


# ---------------------------------------------------------------------------
# deformed-surface quantities
# ---------------------------------------------------------------------------


def deformed_tangents(shell: ReferenceShell, eta: np.ndarray, grad=None) -> np.ndarray:
    """Tangent vectors of phi + eta nu, shape (2, n1, n2, 3)."""
    if grad is None:
        grad = surface_gradient(eta, shell.lengths)
    return shell.d_phi + grad[..., None] * shell.nu + eta[..., None] * shell.d_nu


def deformed_normal(shell: ReferenceShell, eta: np.ndarray, grad=None) -> np.ndarray:
    """Non-unit normal of the deformed surface, expanded in powers of eta.

    Equals d1(phi + eta nu) x d2(phi + eta nu) identically; written out term
    by term so the eta-dependence is explicit.
    """
    if grad is None:
        grad = surface_gradient(eta, shell.lengths)
    nu, d1p, d2p = shell.nu, shell.d_phi[0], shell.d_phi[1]
    d1n, d2n = shell.d_nu[0], shell.d_nu[1]
    e = eta[..., None]
    g1, g2 = grad[0][..., None], grad[1][..., None]
    return (nu * shell.area_element[..., None]
            + g2 * (np.cross(d1p, nu) + e * np.cross(d1n, nu))
            + g1 * (np.cross(nu, d2p) + e * np.cross(nu, d2n))
            + e * (np.cross(d1p, d2n) + np.cross(d1n, d2p))
            + e * e * np.cross(d1n, d2n))


def geometric_factor(shell: ReferenceShell, eta: np.ndarray) -> np.ndarray:
    """gamma(eta): the normal component of the deformed area element, relative."""
    nu, jac = shell.nu, shell.area_element
    linear = np.sum(nu * (np.cross(shell.d_phi[0], shell.d_nu[1])
                          + np.cross(shell.d_nu[0], shell.d_phi[1])), axis=-1)
    quadratic = np.sum(nu * np.cross(shell.d_nu[0], shell.d_nu[1]), axis=-1)
    return 1.0 + eta * linear / jac + eta**2 * quadratic / jac


@dataclass
class AdmissibilityReport:
    ok: bool
    gamma_min: float
    sup_eta: float
    margin_to_L: float
    jacobian_min: float
    beta_slope_condition: bool
    reasons: list = field(default_factory=list)


def check_admissible(shell: ReferenceShell, eta: np.ndarray, gamma_min: float = 0.1,
                     margin: float = 0.0) -> AdmissibilityReport:
    """Pure admissibility scan; never raises.

    ``margin`` shrinks the allowed band to ``|eta| < L - margin``.  The
    profile condition is checked in its sharp form (the radial Jacobian
    ``1 + eta beta'/L`` stays positive); the stronger symmetric slope bound is
    reported separately as ``beta_slope_condition``.
    """
    L = shell.half_width
    sup_eta = float(np.max(np.abs(eta))) if eta.size else 0.0
    gam = float(np.min(geometric_factor(shell, eta)))
    jac = 1.0 + min(float(np.min(eta)), 0.0) * BETA_PRIME_MAX / L
    reasons = []
    if not sup_eta < L - margin:
        reasons.append(f"sup|eta|={sup_eta:.6g} reaches L-margin={L - margin:.6g}")
    if not gam >= gamma_min:
        reasons.append(f"min gamma={gam:.6g} below {gamma_min:.6g}")
    if not jac > 0.0:
        reasons.append(f"tube map Jacobian {jac:.6g} not positive")
    slope_ok = sup_eta == 0.0 or BETA_PRIME_MAX < L / sup_eta
    return AdmissibilityReport(ok=not reasons, gamma_min=gam, sup_eta=sup_eta,
                               margin_to_L=L - sup_eta, jacobian_min=jac,
                               beta_slope_condition=slope_ok, reasons=reasons)


def require_admissible(shell: ReferenceShell, eta: np.ndarray, gamma_min: float = 0.1,
                       margin: float = 0.0) -> AdmissibilityReport:
    report = check_admissible(shell, eta, gamma_min, margin)
    if not report.ok:
        raise AdmissibilityViolation("; ".join(report.reasons), report)
    return report


# ---------------------------------------------------------------------------
# domain map for the slab
# ---------------------------------------------------------------------------


@dataclass
class DomainMap:
    """Psi_eta and Phi_eta for a flat shell at height H with normal +z.

    Points carry the normal coordinate last: ``(x, z)`` for a two-dimensional
    fluid (shell grid with n2 == 1) or ``(x, y, z)``.
    """

    shell: ReferenceShell
    eta: np.ndarray
    newton_tol: float = 1e-12
    newton_maxiter: int = 50

    def _split(self, points):
        pts = np.asarray(points, dtype=float)
        return pts[..., :-1], pts[..., -1]

    def eta_at(self, tangential: np.ndarray) -> np.ndarray:
        flat = tangential.reshape(-1, tangential.shape[-1])
        return fourier_interpolate(self.eta, flat if flat.shape[1] > 1 else flat[:, 0],
                                   self.shell.lengths).reshape(tangential.shape[:-1])

    def forward(self, points: np.ndarray) -> np.ndarray:
        tang, z = self._split(points)
        s = (z - self.shell.height) / self.shell.half_width
        inside = s > -1.0
        shift = np.where(inside, self.eta_at(tang) * beta(np.where(inside, s, -1.0)), 0.0)
        out = np.array(points, dtype=float, copy=True)
        out[..., -1] = z + shift
        return out

    def jacobian_det(self, points: np.ndarray) -> np.ndarray:
        tang, z = self._split(points)
        L = self.shell.half_width
        s = (z - self.shell.height) / L
        return np.where(s > -1.0, 1.0 + self.eta_at(tang) * beta_prime(np.maximum(s, -1.0)) / L, 1.0)

    def boundary(self, y: np.ndarray) -> np.ndarray:
        """Phi_eta(y) = phi(y) + nu(y) eta(y) for tangential points y."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.concatenate([y, (self.shell.height + self.eta_at(y))[:, None]], axis=1)

    def inverse(self, points: np.ndarray) -> np.ndarray:
        """Damped Newton along the normal; the tangential coordinate is fixed."""
        tang, zt = self._split(points)
        H, L = self.shell.height, self.shell.half_width
        eta = self.eta_at(tang)
        z = np.array(zt, dtype=float, copy=True)
        active = zt > H - L
        for _ in range(self.newton_maxiter):
            s = (z - H) / L
            res = np.where(active, z + eta * beta(s) - zt, 0.0)
            if np.max(np.abs(res), initial=0.0) < self.newton_tol:
                break
            slope = 1.0 + eta * beta_prime(s) / L
            step = -res / slope
            lam = np.ones_like(z)
            for _ in range(30):
                trial = z + lam * step
                trial_res = np.abs(trial + eta * beta((trial - H) / L) - zt)
                bad = active & (trial_res > (1.0 - 1e-4 * lam) * np.abs(res)) & (np.abs(res) > self.newton_tol)
                if not np.any(bad):
                    break
                lam = np.where(bad, 0.5 * lam, lam)
            z = np.where(active, z + lam * step, z)
        else:
            s = (z - H) / L
            res = np.where(active, z + eta * beta(s) - zt, 0.0)
            if np.max(np.abs(res), initial=0.0) >= self.newton_tol:
                raise SolverDiverged("tube map inversion did not converge")
        out = np.array(points, dtype=float, copy=True)
        out[..., -1] = z
        return out


def build_domain_map(shell: ReferenceShell, state: ShellState | np.ndarray,
                     gamma_min: float = 0.1) -> DomainMap:
    """Validate the displacement and return its tube map."""
    if shell.height is None:
        raise ValueError("domain maps are implemented for flat slab shells only")
    eta = state.eta if isinstance(state, ShellState) else np.asarray(state, dtype=float)
    eta = eta.reshape(shell.shape)
    require_admissible(shell, eta, gamma_min)
    return DomainMap(shell, eta)
