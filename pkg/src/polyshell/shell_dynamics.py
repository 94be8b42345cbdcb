"""Nonlinear Koiter energy, its exact discrete gradient, the fifth-order
regularizer and an implicit-midpoint shell stepper.

All surface integrals use the normalized measure: the mean over grid nodes
(optionally weighted by the reference area element).  The discrete energy is
a function of the nodal displacement through spectral first and second
derivatives, and :func:`koiter_gradient` is its exact gradient for the inner
product ``<a, b> = mean(a b)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverDiverged
from .geometry import (ReferenceShell, ShellState, deformed_normal, require_admissible,
                       surface_gradient, surface_hessian, periodic_derivative)


@dataclass(frozen=True)
class KoiterModel:
    shell: ReferenceShell
    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    thickness: float = 0.1  # half-thickness eps0
    weighted_measure: bool = False
    gamma_min: float = 0.1

    def __post_init__(self):
        if not (self.lame_mu > 0 and self.lame_lambda + self.lame_mu > 0 and self.thickness > 0):
            raise ValueError("need mu > 0, lambda + mu > 0 and positive thickness")

    @property
    def c_trace(self) -> float:
        lam, mu = self.lame_lambda, self.lame_mu
        return 4.0 * lam * mu / (lam + 2.0 * mu)

    @property
    def contravariant_metric(self) -> np.ndarray:
        """a^{ab} per node, shape (n1, n2, 2, 2)."""
        a = np.moveaxis(self.shell.metric, (0, 1), (-2, -1))
        return np.linalg.inv(a)

    @property
    def node_weights(self) -> np.ndarray:
        if not self.weighted_measure:
            return np.ones(self.shell.shape)
        J = self.shell.area_element
        return J / np.mean(J)

    def elasticity_tensor(self) -> np.ndarray:
        """C^{abst} per node, shape (n1, n2, 2, 2, 2, 2)."""
        A = self.contravariant_metric
        return (self.c_trace * np.einsum("...ab,...st->...abst", A, A)
                + 2.0 * self.lame_mu * (np.einsum("...as,...bt->...abst", A, A)
                                        + np.einsum("...at,...bs->...abst", A, A)))

    def contract(self, X: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
        """C : X (x) Y for symmetric fields stored as (2, 2, n1, n2)."""
        Y = X if Y is None else Y
        A = self.contravariant_metric
        Xn = np.moveaxis(X, (0, 1), (-2, -1))
        Yn = np.moveaxis(Y, (0, 1), (-2, -1))
        AX = A @ Xn
        AY = A @ Yn
        trX = np.trace(AX, axis1=-2, axis2=-1)
        trY = np.trace(AY, axis1=-2, axis2=-1)
        return self.c_trace * trX * trY + 4.0 * self.lame_mu * np.trace(AX @ AY, axis1=-2, axis2=-1)

    def _contract_grad(self, X: np.ndarray) -> np.ndarray:
        """Derivative of C : X (x) X with respect to X, as (2, 2, n1, n2)."""
        A = self.contravariant_metric
        Xn = np.moveaxis(X, (0, 1), (-2, -1))
        trX = np.trace(A @ Xn, axis1=-2, axis2=-1)
        out = 2.0 * self.c_trace * trX[..., None, None] * A + 8.0 * self.lame_mu * (A @ Xn @ A)
        return np.moveaxis(out, (-2, -1), (0, 1))


# ---------------------------------------------------------------------------
# geometric quantities
# ---------------------------------------------------------------------------


def _dot(u, v):
    return np.sum(u * v, axis=-1)


def metric_change(shell: ReferenceShell, eta: np.ndarray, grad=None) -> np.ndarray:
    """G_ij = d_i eta d_j eta + eta S_ij + eta^2 N_ij, shape (2, 2, n1, n2)."""
    if grad is None:
        grad = surface_gradient(eta, shell.lengths)
    dp, dn = shell.d_phi, shell.d_nu
    S = np.einsum("i...k,j...k->ij...", dp, dn)
    S = S + np.swapaxes(S, 0, 1)
    N = np.einsum("i...k,j...k->ij...", dn, dn)
    return grad[:, None] * grad[None, :] + eta * S + eta**2 * N


def _deformed_second_derivatives(shell, eta, grad, hess):
    """d_ij (phi + eta nu), shape (2, 2, n1, n2, 3)."""
    nu, dn, ddn = shell.nu, shell.d_nu, shell.dd_nu
    out = shell.dd_phi + hess[..., None] * nu + eta[..., None] * ddn
    out = out + grad[:, None, ..., None] * dn[None] + grad[None, :, ..., None] * dn[:, None]
    return out


def curvature_change(shell: ReferenceShell, eta: np.ndarray, grad=None, hess=None) -> np.ndarray:
    """R#_ij = d_ij phi_eta . nu_eta / |d1 phi x d2 phi| - d_ij phi . nu."""
    if grad is None:
        grad = surface_gradient(eta, shell.lengths)
    if hess is None:
        hess = surface_hessian(eta, shell.lengths)
    nu_eta = deformed_normal(shell, eta, grad)
    ddp = _deformed_second_derivatives(shell, eta, grad, hess)
    J = shell.area_element
    return _dot(ddp, nu_eta) / J - _dot(shell.dd_phi, shell.nu)


# ---------------------------------------------------------------------------
# energy and gradient
# ---------------------------------------------------------------------------


def _energy_density(model: KoiterModel, G, R):
    e0 = model.thickness
    return 0.5 * e0 * model.contract(G) + e0**3 / 6.0 * model.contract(R)


def koiter_energy(model: KoiterModel, eta: np.ndarray, check: bool = True) -> float:
    shell = model.shell
    eta = np.asarray(eta, dtype=float).reshape(shell.shape)
    if check:
        require_admissible(shell, eta, model.gamma_min)
    grad = surface_gradient(eta, shell.lengths)
    hess = surface_hessian(eta, shell.lengths)
    G = metric_change(shell, eta, grad)
    R = curvature_change(shell, eta, grad, hess)
    return float(np.mean(model.node_weights * _energy_density(model, G, R)))


def koiter_gradient(model: KoiterModel, eta: np.ndarray, check: bool = True) -> np.ndarray:
    """Exact gradient of the discrete energy under <a, b> = mean(a b)."""
    shell = model.shell
    eta = np.asarray(eta, dtype=float).reshape(shell.shape)
    if check:
        require_admissible(shell, eta, model.gamma_min)
    lengths = shell.lengths
    grad = surface_gradient(eta, lengths)
    hess = surface_hessian(eta, lengths)
    w = model.node_weights
    e0 = model.thickness
    nu, dn, ddn, dp = shell.nu, shell.d_nu, shell.dd_nu, shell.d_phi
    J = shell.area_element

    G = metric_change(shell, eta, grad)
    R = curvature_change(shell, eta, grad, hess)
    PG = 0.5 * e0 * model._contract_grad(G) * w
    PR = e0**3 / 6.0 * model._contract_grad(R) * w

    # metric change partials
    S = np.einsum("i...k,j...k->ij...", dp, dn)
    S = S + np.swapaxes(S, 0, 1)
    N = np.einsum("i...k,j...k->ij...", dn, dn)
    p0 = np.einsum("ij...,ij...->...", PG, S + 2.0 * eta * N)
    sym = PG + np.swapaxes(PG, 0, 1)
    p1 = np.einsum("kj...,j...->k...", sym, grad)

    # curvature change partials
    e = eta[..., None]
    tang = dp + grad[..., None] * nu + e * dn  # d_k phi_eta
    nu_eta = np.cross(tang[0], tang[1])
    dnu_deta = np.cross(dn[0], tang[1]) + np.cross(tang[0], dn[1])
    dnu_da = np.stack([np.cross(nu, tang[1]), np.cross(tang[0], nu)])
    ddp = _deformed_second_derivatives(shell, eta, grad, hess)
    p0 = p0 + np.einsum("ij...,ij...->...", PR, (_dot(ddn, nu_eta) + _dot(ddp, dnu_deta)) / J)
    for k in range(2):
        dR = _dot(ddp, dnu_da[k]) / J
        # d_ij phi_eta depends on a_k through delta_ik d_j nu + delta_jk d_i nu
        extra = np.zeros_like(dR)
        for j in range(2):
            val = _dot(dn[j], nu_eta) / J
            extra[k, j] += val
            extra[j, k] += val
        p1[k] = p1[k] + np.einsum("ij...,ij...->...", PR, dR + extra)
    p2 = PR * (_dot(nu, nu_eta) / J)

    out = p0.copy()
    for k in range(2):
        out -= periodic_derivative(p1[k], k, lengths[k])
    for i in range(2):
        for j in range(2):
            out += periodic_derivative(periodic_derivative(p2[i, j], i, lengths[i]), j, lengths[j])
    return out


def discrete_gradient(model: KoiterModel, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Averaged gradient with <K'_d, b - a> = K(b) - K(a) exactly (midpoint plus correction)."""
    mid = 0.5 * (a + b)
    g = koiter_gradient(model, mid, check=False)
    d = b - a
    nrm = float(np.mean(d * d))
    if nrm <= 1e-300:
        return g
    defect = koiter_energy(model, b, check=False) - koiter_energy(model, a, check=False) - float(np.mean(g * d))
    return g + defect / nrm * d


# ---------------------------------------------------------------------------
# fifth-order regularizer
# ---------------------------------------------------------------------------


def _symbol(shape, lengths=(1.0, 1.0)) -> np.ndarray:
    n1, n2 = shape
    k1 = 2.0 * np.pi * np.fft.fftfreq(n1, d=lengths[0] / n1)
    k2 = 2.0 * np.pi * np.fft.fftfreq(n2, d=lengths[1] / n2)
    return (k1[:, None] ** 2 + k2[None, :] ** 2) ** 5


def regularizer_energy(eta: np.ndarray, lengths=(1.0, 1.0)) -> float:
    """mean |grad^5 eta|^2 via Parseval."""
    eta = np.atleast_2d(eta.T).T if eta.ndim == 1 else eta
    hat = np.fft.fft2(eta) / eta.size
    return float(np.sum(_symbol(eta.shape, lengths) * np.abs(hat) ** 2))


def regularizer_gradient(eta: np.ndarray, rho: float, lengths=(1.0, 1.0)) -> np.ndarray:
    """rho L'(eta), Fourier symbol 2 rho |k|^10."""
    shape = eta.shape
    e2 = eta.reshape(shape[0], -1)
    out = np.real(np.fft.ifft2(2.0 * rho * _symbol(e2.shape, lengths) * np.fft.fft2(e2)))
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


@dataclass
class ShellForce:
    """Scalar normal load on the shell grid: external part plus fluid traction."""

    g: np.ndarray
    fluid: np.ndarray | None = None

    @property
    def total(self) -> np.ndarray:
        return self.g if self.fluid is None else self.g + self.fluid


def bending_symbol(model: KoiterModel) -> np.ndarray:
    """Linear bending stiffness of a flat shell, used to precondition iterations."""
    e0 = model.thickness
    k = _symbol(model.shell.shape, model.shell.lengths) ** 0.4
    return e0**3 / 6.0 * (model.c_trace + 4.0 * model.lame_mu) * 2.0 * k


def shell_energy(model: KoiterModel, state: ShellState, rho: float) -> float:
    return (0.5 * float(np.mean(state.eta_t**2)) + koiter_energy(model, state.eta, check=False)
            + rho * regularizer_energy(state.eta, model.shell.lengths))


def step_shell(state: ShellState, forces: ShellForce, model: KoiterModel, rho: float, dt: float,
               tol: float = 1e-13, maxiter: int = 200) -> ShellState:
    """Implicit midpoint for eta_tt + K'(eta) + rho L'(eta) = force.

    The midpoint displacement solves
    ``(I + dt^2/4 rho L') m = eta + dt/2 eta_t + dt^2/4 (f - K'(m))``; the
    nonlinear term is iterated with the flat-shell bending symbol moved into
    the implicit FFT operator as a preconditioner.
    """
    shell = model.shell
    shape = shell.shape
    f = forces.total.reshape(shape)
    lengths = shell.lengths
    symbol = 1.0 + 0.25 * dt**2 * (2.0 * rho * _symbol(shape, lengths) + bending_symbol(model))
    base = state.eta + 0.5 * dt * state.eta_t
    pre = 0.25 * dt**2 * bending_symbol(model)
    m = base.copy()
    scale = max(np.max(np.abs(base)), np.max(np.abs(0.25 * dt**2 * f)), 1e-300)
    for _ in range(maxiter):
        Kp = koiter_gradient(model, m, check=False)
        rhs_hat = np.fft.fft2(base + 0.25 * dt**2 * (f - Kp)) + pre * np.fft.fft2(m)
        new = np.real(np.fft.ifft2(rhs_hat / symbol))
        if not np.all(np.isfinite(new)):
            raise SolverDiverged("shell midpoint iteration produced non-finite values")
        delta = np.max(np.abs(new - m))
        m = new
        if delta <= tol * scale:
            break
    else:
        raise SolverDiverged("shell midpoint iteration did not converge")
    eta1 = 2.0 * m - state.eta
    vel1 = state.eta_t + 4.0 * (m - base) / dt
    require_admissible(shell, eta1, model.gamma_min)
    return ShellState(eta1, vel1, state.t + dt)


def regularizer_matrix(shape, rho, lengths) -> np.ndarray:
    n = int(np.prod(shape))
    eye = np.eye(n).reshape((n,) + tuple(shape))
    return np.stack([regularizer_gradient(e, rho, lengths).ravel() for e in eye], axis=1)


def koiter_hessian(model: KoiterModel, eta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Dense Hessian by central differences of the exact gradient."""
    shape = model.shell.shape
    n = int(np.prod(shape))
    H = np.empty((n, n))
    for j in range(n):
        d = np.zeros(n)
        d[j] = h
        d = d.reshape(shape)
        H[:, j] = ((koiter_gradient(model, eta + d, check=False)
                    - koiter_gradient(model, eta - d, check=False)) / (2 * h)).ravel()
    return 0.5 * (H + H.T)


def static_residual(model: KoiterModel, eta: np.ndarray, g: np.ndarray, rho: float) -> float:
    """Max nodal size of (1 + rho L' + bending)^{-1} (K'(eta) + rho L'(eta) - g).

    Measured in displacement units: the raw residual has a rounding floor of
    about |eta| * machine epsilon * 2 rho k_max^10, which the stiff symbol
    removes again.
    """
    shape = model.shell.shape
    lengths = model.shell.lengths
    eta = np.asarray(eta, dtype=float).reshape(shape)
    res = koiter_gradient(model, eta, check=False) + regularizer_gradient(eta, rho, lengths) - g.reshape(shape)
    symbol = 1.0 + 2.0 * rho * _symbol(shape, lengths) + bending_symbol(model)
    return float(np.max(np.abs(np.real(np.fft.ifft2(np.fft.fft2(res) / symbol)))))


def static_equilibrium(model: KoiterModel, g: np.ndarray, rho: float, eta0=None, tol: float = 1e-12,
                       maxiter: int = 30) -> np.ndarray:
    """Solve K'(eta) + rho L'(eta) = g by Newton's method with a dense Jacobian.

    Converged when :func:`static_residual` drops below ``tol``.
    """
    shape = model.shell.shape
    lengths = model.shell.lengths
    g = np.asarray(g, dtype=float).reshape(shape)
    Lmat = regularizer_matrix(shape, rho, lengths)
    eta = np.zeros(shape) if eta0 is None else np.asarray(eta0, float).reshape(shape).copy()
    for _ in range(maxiter):
        if static_residual(model, eta, g, rho) <= tol:
            return eta
        res = koiter_gradient(model, eta, check=False) + regularizer_gradient(eta, rho, lengths) - g
        J = koiter_hessian(model, eta) + Lmat
        # symmetric diagonal scaling keeps the stiff high modes well conditioned
        d = 1.0 / np.sqrt(np.maximum(np.abs(np.diag(J)), 1e-300))
        y = np.linalg.lstsq(d[:, None] * J * d[None, :], d * res.ravel(), rcond=1e-15)[0]
        eta = eta - (d * y).reshape(shape)
    raise SolverDiverged("static shell Newton solve did not converge")
