"""Spring laws, Maxwellians, cutoff functions and the configuration-space grid.

The configuration grid is the polar product rule used by the Fokker-Planck
solver for a single spring in two dimensions: a Gauss rule in the radial
variable matched to the Maxwellian weight, times a uniform angular rule.
Each node owns a polar finite-volume cell whose radial faces are placed where
the cumulative Maxwellian mass equals the cumulative quadrature weight, so
every cell carries exactly its node's weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, special

from .errors import OutOfDomain, QuadratureFailure

HOOKEAN = "hookean"
FENE = "fene"
TANNER = "tanner"
LAWS = (HOOKEAN, FENE, TANNER)

INV_E = np.exp(-1.0)


@dataclass(frozen=True)
class SpringLaw:
    kind: str = FENE
    b: float = 10.0
    K: int = 1
    d: int = 2

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ValueError(f"unknown spring law {self.kind!r}")
        if self.kind != HOOKEAN and not self.b > 0:
            raise ValueError("extensibility b must be positive")
        if self.K < 1 or self.d not in (2, 3):
            raise ValueError("need K >= 1 and d in {2, 3}")

    @property
    def bounded(self) -> bool:
        return self.kind != HOOKEAN

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.b)) if self.bounded else np.inf

    def potential(self, s):
        """U(s) as a function of s = |q|^2 / 2."""
        s = np.asarray(s, dtype=float)
        if self.kind == FENE:
            return -0.5 * self.b * np.log1p(-2.0 * s / self.b)
        return s

    def potential_prime(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == FENE:
            return 1.0 / (1.0 - 2.0 * s / self.b)
        return np.ones_like(s)

    def _check_domain(self, q2):
        if self.bounded and np.any(q2 >= self.b):
            raise OutOfDomain(f"|q|^2 reaches b={self.b}")

    def force(self, q) -> np.ndarray:
        """F(q) = U'(|q|^2/2) q for a single spring; q has shape (..., d)."""
        q = np.asarray(q, dtype=float)
        q2 = np.sum(q * q, axis=-1)
        self._check_domain(q2)
        return self.potential_prime(0.5 * q2)[..., None] * q

    def normalization(self) -> float:
        """Z such that exp(-U)/Z integrates to one over the ball in R^d."""
        d = self.d
        sphere = 2.0 * np.pi ** (d / 2) / special.gamma(d / 2)
        if self.kind == FENE:
            return sphere * self.b ** (d / 2) / 2.0 * special.beta(d / 2, self.b / 2 + 1.0)
        if self.kind == HOOKEAN:
            return (2.0 * np.pi) ** (d / 2)
        # Gaussian restricted to the ball: regularized lower incomplete gamma
        return (2.0 * np.pi) ** (d / 2) * special.gammainc(d / 2, self.b / 2)

    def maxwellian(self, q) -> np.ndarray:
        """Single-spring Maxwellian; zero outside the ball."""
        q = np.asarray(q, dtype=float)
        q2 = np.sum(q * q, axis=-1)
        Z = self.normalization()
        if self.kind == FENE:
            return np.where(q2 < self.b, np.clip(1.0 - q2 / self.b, 0.0, None) ** (self.b / 2), 0.0) / Z
        out = np.exp(-0.5 * q2) / Z
        return np.where(q2 < self.b, out, 0.0) if self.bounded else out

    def maxwellian_radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.maxwellian(r[..., None] * np.eye(1, self.d)[0])


def chain_force(law: SpringLaw, q) -> np.ndarray:
    """Forces of all K springs; q has shape (..., K, d)."""
    return law.force(q)


def chain_maxwellian(law: SpringLaw, q) -> np.ndarray:
    """Product Maxwellian of a K-spring chain; q has shape (..., K, d)."""
    return np.prod(law.maxwellian(q), axis=-1)


# ---------------------------------------------------------------------------
# physical parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalParams:
    mu: float = 0.1
    eps: float = 1e-2
    lam: float = 1.0
    k: float = 0.1
    eth: float = 0.0
    rouse: np.ndarray = field(default_factory=lambda: np.array([[2.0]]))

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.rouse, dtype=float))
        object.__setattr__(self, "rouse", A)
        if not (self.mu > 0 and self.eps > 0 and self.lam > 0 and self.k > 0 and self.eth >= 0):
            raise ValueError("need mu, eps, lam, k > 0 and eth >= 0")
        if not np.allclose(A, A.T, rtol=0, atol=1e-14):
            raise ValueError("Rouse matrix must be symmetric")
        if self.A0 <= 0:
            raise ValueError("Rouse matrix must be positive definite")

    @property
    def A0(self) -> float:
        return float(np.linalg.eigvalsh(self.rouse)[0])


@dataclass(frozen=True)
class PolymerModel:
    law: SpringLaw = field(default_factory=SpringLaw)
    params: PhysicalParams = field(default_factory=PhysicalParams)

    def __post_init__(self):
        if self.params.rouse.shape != (self.law.K, self.law.K):
            raise ValueError("Rouse matrix must be K x K")


# ---------------------------------------------------------------------------
# cutoffs and entropy
# ---------------------------------------------------------------------------


def _smoothstep5(t):
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def _smoothstep5_integral(u):
    return 2.5 * u**4 - 3.0 * u**5 + u**6


def cutoff_gamma(s, ell: float = 1.0):
    """C^2 cutoff: 1 on [-ell, ell], 0 outside (-2 ell, 2 ell), monotone between."""
    u = np.clip(np.abs(np.asarray(s, dtype=float)) / ell - 1.0, 0.0, 1.0)
    return 1.0 - _smoothstep5(u)


GAMMA_INTEGRAL = 1.5  # integral of the unit cutoff over [0, 2]


def cutoff_T(ell: float, s):
    """Integral of the cutoff from 0 to s (s >= 0)."""
    s = np.asarray(s, dtype=float)
    u = np.clip(s / ell - 1.0, 0.0, 1.0)
    return np.where(s <= ell, s, ell * (1.0 + u - _smoothstep5_integral(u)))


def cutoff_Lambda(ell: float, s):
    s = np.asarray(s, dtype=float)
    return s * cutoff_gamma(s, ell)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def cutoff_T_delta(delta: float, ell: float, s):
    """Integral of r Gamma(r/ell) / (r + delta) from 0 to s.

    Closed form where the cutoff equals one; a 32-point Gauss-Legendre rule on
    the polynomial transition layer, where the integrand is smooth.
    """
    s = np.asarray(s, dtype=float)
    lo = np.minimum(s, ell)
    core = lo - delta * np.log1p(lo / delta)
    hi = np.clip(s, ell, 2.0 * ell)
    half = 0.5 * (hi - ell)
    r = ell + half[..., None] * (1.0 + _GL_X)
    tail = half * np.sum(_GL_W * r * cutoff_gamma(r, ell) / (r + delta), axis=-1)
    return core + tail


def entropy(s):
    """F(s) = s ln s + 1/e with F(0) = 1/e."""
    return special.xlogy(s, s) + INV_E


def entropy_delta(delta: float, s):
    sd = np.asarray(s, dtype=float) + delta
    return sd * np.log(sd) + INV_E


# ---------------------------------------------------------------------------
# polar configuration grid (single spring, d = 2)
# ---------------------------------------------------------------------------


def _tail_mass(mass: np.ndarray) -> np.ndarray:
    """Mass beyond each face, summed from the outside so tiny tails keep their digits."""
    tail = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]])
    tail[0] = 1.0
    return tail


def _radial_rule(law: SpringLaw, nr: int):
    """Nodes r_k, annulus masses w_k (summing to one) and radial faces.

    Works in the variable u in which the radial Maxwellian mass has an
    elementary cumulative distribution, so faces follow from its inverse.
    """
    if law.kind == FENE:
        alpha = law.b / 2.0
        x, w = special.roots_jacobi(nr, alpha, 0.0)
        t = 0.5 * (1.0 + x)
        mass = w / np.sum(w)
        tail = _tail_mass(mass)
        tf = 1.0 - tail ** (1.0 / (alpha + 1.0))
        return np.sqrt(law.b * t), mass, np.sqrt(law.b * tf)
    if law.kind == HOOKEAN:
        s, w = special.roots_laguerre(nr)
        mass = w / np.sum(w)
        with np.errstate(divide="ignore"):
            sf = -np.log(_tail_mass(mass))
        return np.sqrt(2.0 * s), mass, np.sqrt(2.0 * sf)
    # Tanner: Gaussian restricted to the ball, Gauss-Legendre in t = r^2/b
    x, w = special.roots_legendre(nr)
    t = 0.5 * (1.0 + x)
    decay = law.b / 2.0
    w = w * np.exp(-decay * t)
    mass = w / np.sum(w)
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    tf = -np.log1p(-np.minimum(cum, 1.0) * (-np.expm1(-decay))) / decay
    tf[-1] = 1.0
    # the folded weight is not a Gauss rule for this measure, so fall back to
    # midpoint faces if the mass partition fails to separate the nodes
    if not np.all((tf[:-1] < t) & (t < tf[1:])):
        tf = np.concatenate([[0.0], 0.5 * (t[1:] + t[:-1]), [1.0]])
    return np.sqrt(law.b * t), mass, np.sqrt(law.b * tf)


@dataclass
class ConfigGrid:
    """Polar product grid and finite-volume cells on the configuration ball.

    Node (i, j) sits at radius ``r[i]`` and angle ``theta[j]``; its cell is
    the annular sector between ``r_faces[i:i+2]`` and ``theta[j] -/+ dtheta/2``.
    ``weights[i, j]`` is the exact Maxwellian mass of the cell.
    """

    law: SpringLaw
    nr: int = 8
    ntheta: int = 16
    m: float = np.inf

    def __post_init__(self):
        if self.law.d != 2 or self.law.K != 1:
            raise ValueError("the polar grid covers a single spring in two dimensions")
        if self.ntheta % 2:
            raise ValueError("ntheta must be even so that diameters are grid lines")
        self.r, self.radial_mass, self.r_faces = _radial_rule(self.law, self.nr)
        if not np.all((self.r_faces[:-1] < self.r) & (self.r < self.r_faces[1:])):
            raise QuadratureFailure("radial faces do not separate the quadrature nodes")
        self.dtheta = 2.0 * np.pi / self.ntheta
        self.theta = (np.arange(self.ntheta) + 0.5) * self.dtheta

    @property
    def shape(self) -> tuple:
        return (self.nr, self.ntheta)

    @cached_property
    def q(self) -> np.ndarray:
        """Node coordinates, shape (nr, ntheta, 2)."""
        return self.r[:, None, None] * np.stack([np.cos(self.theta), np.sin(self.theta)], -1)[None]

    @cached_property
    def M(self) -> np.ndarray:
        return self.law.maxwellian(self.q)

    @cached_property
    def floor(self) -> float:
        return 0.0 if np.isinf(self.m) else 1.0 / self.m

    @cached_property
    def cell_area(self) -> np.ndarray:
        rf = np.where(np.isinf(self.r_faces), 0.0, self.r_faces)
        area = 0.5 * np.diff(rf**2) * self.dtheta
        if np.isinf(self.r_faces[-1]):
            area[-1] = np.inf
        return np.broadcast_to(area[:, None], self.shape)

    @cached_property
    def weights(self) -> np.ndarray:
        """Mass of each cell under M^m = max(M, 0) + 1/m."""
        w = np.broadcast_to((self.radial_mass / self.ntheta)[:, None], self.shape)
        if self.floor:
            if np.isinf(self.r_faces[-1]):
                raise ValueError("approximate Maxwellians need a bounded configuration domain")
            w = w + self.floor * self.cell_area
        return np.array(w)

    def integrate(self, values) -> np.ndarray:
        """Sum of values * cell weight over the trailing (nr, ntheta) axes."""
        return np.einsum("...ij,ij->...", values, self.weights)

    # -- finite-volume geometry -------------------------------------------

    @cached_property
    def M_faces_exact(self) -> np.ndarray:
        rf = self.r_faces
        out = np.zeros_like(rf)
        finite = np.isfinite(rf)
        out[finite] = self.law.maxwellian_radial(rf[finite])
        return out

    @cached_property
    def M_faces(self) -> np.ndarray:
        return self.M_faces_exact + self.floor * np.isfinite(self.r_faces)

    @cached_property
    def exact_weights(self) -> np.ndarray:
        """Cell masses under the exact Maxwellian (no floor)."""
        return np.array(np.broadcast_to((self.radial_mass / self.ntheta)[:, None], self.shape))

    @cached_property
    def radial_line_mass(self) -> np.ndarray:
        """Integral of M^m along each radial cell, for angular transmissibilities."""
        out = np.empty(self.nr)
        law = self.law
        for i in range(self.nr):
            a, b = self.r_faces[i], self.r_faces[i + 1]
            if law.kind == HOOKEAN:
                out[i] = np.sqrt(np.pi / 2.0) * (special.erfc(a / np.sqrt(2.0))
                                                 - special.erfc(b / np.sqrt(2.0))) / law.normalization()
                continue
            val, err = integrate.quad(law.maxwellian_radial, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)
            if not np.isfinite(val) or err > 1e-9 * max(abs(val), 1e-300) + 1e-14:
                raise QuadratureFailure(f"radial line mass did not converge on cell {i}")
            out[i] = val + self.floor * (b - a)
        return out

    @cached_property
    def radial_transmissibility(self) -> np.ndarray:
        """Interior radial faces 1..nr-1: M(r_f) r_f dtheta / (r_{i+1} - r_i)."""
        rf = self.r_faces[1:-1]
        return self.M_faces[1:-1] * rf * self.dtheta / np.diff(self.r)

    @cached_property
    def angular_transmissibility(self) -> np.ndarray:
        """Per radial cell: line mass / (r_i dtheta), same for every angular face."""
        return self.radial_line_mass / (self.r * self.dtheta)

    @cached_property
    def face_moments(self):
        """Integrals of M n (x) q over every interior face, exact Maxwellian.

        Returns ``(radial, angular)``: ``radial[f, j]`` is the 2x2 moment of the
        arc between cells (f, j) and (f+1, j), normal pointing outward in r;
        ``angular[i, j]`` is the moment of the ray between (i, j) and
        (i, j+1), normal along increasing theta.
        """
        rf = self.r_faces[1:-1]
        ta = self.theta - 0.5 * self.dtheta
        tb = self.theta + 0.5 * self.dtheta
        # integrals of e_r (x) e_r over the arc
        cc = 0.5 * self.dtheta + 0.25 * (np.sin(2 * tb) - np.sin(2 * ta))
        ss = 0.5 * self.dtheta - 0.25 * (np.sin(2 * tb) - np.sin(2 * ta))
        cs = -0.25 * (np.cos(2 * tb) - np.cos(2 * ta))
        err = np.stack([np.stack([cc, cs], -1), np.stack([cs, ss], -1)], -2)
        radial = (self.M_faces_exact[1:-1] * rf**2)[:, None, None, None] * err[None]
        # ray at theta_f: n = e_theta, q = r e_r, mass integral of M r dr
        tf = tb
        e_r = np.stack([np.cos(tf), np.sin(tf)], -1)
        e_t = np.stack([-np.sin(tf), np.cos(tf)], -1)
        outer = np.einsum("ja,jb->jab", e_t, e_r)
        first_moment = self.radial_mass / (2.0 * np.pi)
        angular = first_moment[:, None, None, None] * outer[None]
        return radial, angular


@dataclass
class MaxwellianTable:
    law: SpringLaw
    grid: ConfigGrid
    normalization: float
    values: np.ndarray

    @property
    def m(self) -> float:
        return self.grid.m

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.grid.weights))

    def header(self) -> dict:
        return {"law": self.law.kind, "b": self.law.b, "K": self.law.K, "d": self.law.d,
                "nr": self.grid.nr, "ntheta": self.grid.ntheta, "m": self.grid.m,
                "normalization": self.normalization}


def maxwellian(law: SpringLaw, nr: int = 8, ntheta: int = 16, m: float = np.inf) -> MaxwellianTable:
    """Build the Maxwellian table on the polar grid and check its normalization."""
    grid = ConfigGrid(law, nr, ntheta, m)
    Z = law.normalization()
    if not np.isfinite(Z) or Z <= 0:
        raise QuadratureFailure("Maxwellian normalization is not finite")
    mass = np.sum(grid.radial_mass)
    if abs(mass - 1.0) > 1e-12:
        raise QuadratureFailure(f"radial masses sum to {mass}")
    values = grid.M + grid.floor
    return MaxwellianTable(law, grid, Z, values)


def product_rule_3d(law: SpringLaw, nr: int = 16, ncos: int = 16, nphi: int = 16):
    """Nodes and Maxwellian-weighted weights for one spring in three dimensions."""
    if law.kind == FENE:
        x, w = special.roots_jacobi(nr, law.b / 2.0, 0.5)
        t = 0.5 * (1.0 + x)
        # dq = 4 pi r^2 dr / (4 pi) ... in t: r^2 dr = b^{3/2} t^{1/2} dt / 2
        w = w * 2.0 ** (-law.b / 2.0 - 1.5) * law.b**1.5 / 2.0 / law.normalization()
        r = np.sqrt(law.b * t)
    elif law.kind == HOOKEAN:
        s, w = special.roots_genlaguerre(nr, 0.5)
        w = w * np.sqrt(2.0) / law.normalization()
        r = np.sqrt(2.0 * s)
    else:
        x, w = special.roots_legendre(nr)
        r = 0.5 * np.sqrt(law.b) * (1.0 + x)
        w = 0.5 * np.sqrt(law.b) * w * r**2 * np.exp(-0.5 * r**2) / law.normalization()
    c, wc = special.roots_legendre(ncos)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    wphi = np.full(nphi, 2.0 * np.pi / nphi)
    sn = np.sqrt(1.0 - c**2)
    dirs = np.stack([sn[:, None] * np.cos(phi)[None], sn[:, None] * np.sin(phi)[None],
                     np.broadcast_to(c[:, None], (ncos, nphi))], -1)
    q = r[:, None, None, None] * dirs[None]
    weights = w[:, None, None] * wc[None, :, None] * wphi[None, None, :]
    return q.reshape(-1, 3), weights.ravel()
