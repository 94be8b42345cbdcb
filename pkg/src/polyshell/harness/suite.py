"""Invariant and acceptance checks shared by ``polyshell validate`` and the test suite.

Each check returns a :class:`CheckResult`; ``fast`` selects a reduced size
that keeps the whole fast suite within a few minutes.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..coupler import CoupledSolver, energy_ledger, rho_refinement_study
from ..fokker_planck import ConfigDensity, FPHistory, FPSolver, entropy_dissipation_check
from ..geometry import check_admissible, flat_shell, torus_shell
from ..number_density import XiDiagnostics, XiSolver, energy_identity_residual, marginalize
from ..polymer_model import HOOKEAN, ConfigGrid, PolymerModel, SpringLaw
from ..shell_dynamics import KoiterModel, koiter_energy, koiter_gradient
from ..spatial import ShearFlow, SlabMesh, ZeroFlow, prepare_step
from ..stress import gradient_form_stress, kramers_stress, truncated_moment, truncation_constant
from .runners import build_problem, fixed_point_config, prescribed_shell
from .scenarios import load_preset

TOL_NEG = 1e-8


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(name, fn, *args):
    t = time.perf_counter()
    ok, detail, values = fn(*args)
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t, values)


# ---------------------------------------------------------------------------
# density runs shared by criteria 2-4
# ---------------------------------------------------------------------------


def density_run(psi0, mesh: SlabMesh, model: PolymerModel, grid: ConfigGrid, flow, eta, dt: float, steps: int):
    """Advance both densities; returns (FP history, Xi diagnostics)."""
    fp = FPSolver(model, grid)
    xs = XiSolver(model.params.eps)
    state = ConfigDensity(psi0, 0.0)
    xi = marginalize(psi0, grid)
    geom = mesh.geometry(eta(0.0))
    hist, xd = FPHistory(), XiDiagnostics()
    hist.append(fp.initial_record(state, geom))
    xd.record(xi, geom, 0.0, keep=False)
    grad = 0.0
    for n in range(steps):
        g1 = mesh.geometry(eta((n + 1) * dt))
        ops = prepare_step(geom, g1, flow, n * dt, dt)
        state, rec = fp.step(state, ops)
        xi, gint = xs.step(xi, ops)
        grad += gint
        hist.append(rec)
        xd.record(xi, g1, grad, keep=False)
        geom = g1
    return hist, xd


def random_density(rng, shape):
    """Nonnegative data with exact zeros on about a fifth of the nodes."""
    return rng.uniform(0.0, 2.0, shape) * (rng.random(shape) > 0.2)


def density_suite(fast: bool):
    """The fpk suite: randomized shear runs, the shear preset and a moving-shell run."""
    runs = []
    mesh = SlabMesh(8, 4)
    model = PolymerModel()
    grid = ConfigGrid(model.law, 6, 12)
    rng = np.random.default_rng(2024)
    n_random, steps = (20, 20) if fast else (20, 50)
    still = lambda t: np.zeros(mesh.nx)  # noqa: E731
    for i in range(n_random):
        psi0 = random_density(rng, (mesh.ncells,) + grid.shape)
        runs.append((f"random-shear-{i}", *density_run(psi0, mesh, model, grid, ShearFlow(2.0), still, 2e-3, steps)))
    cfg = load_preset("shear-fixed-domain")
    if fast:
        cfg.set("fluid.steps", 50)
    res = run_fpk_inline(cfg)
    runs.append(("shear-fixed-domain", res[0], res[1]))
    cfg.set("prescribed.shell_motion", "breathing")
    cfg.set("prescribed.shell_amplitude", 0.05)
    cfg.set("prescribed.shell_frequency", 2.0)
    res = run_fpk_inline(cfg)
    runs.append(("breathing-shell", res[0], res[1]))
    return runs


def run_fpk_inline(cfg):
    from .runners import build_mesh, build_model, initial_psi
    mesh = build_mesh(cfg)
    model, grid = build_model(cfg)
    flow = ShearFlow(cfg["prescribed"]["shear_rate"]) if cfg["prescribed"]["flow"] == "shear" else ZeroFlow()
    return density_run(initial_psi(cfg, mesh.ncells, grid), mesh, model, grid, flow, prescribed_shell(cfg, mesh),
                       cfg["fluid"]["dt"], cfg["fluid"]["steps"])


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def check_equilibrium(fast: bool):
    cfg = load_preset("rest-state")
    if fast:
        cfg.set("fluid.steps", 100)
    solver = CoupledSolver(build_problem(cfg), fixed_point_config(cfg))
    traj = solver.run()
    drifts = {
        "velocity": float(np.max(np.abs(traj.array("velocity")))),
        "eta": float(np.max(np.abs(traj.array("eta")))),
        "shell_velocity": float(np.max(np.abs(traj.array("V")))),
        "psi": max(float(np.max(np.abs(traj.psi_final - 1.0))), float(np.max(np.abs(traj.array("psi_min") - 1.0)))),
        "xi": float(np.max(np.abs(traj.array("xi") - 1.0))),
        "energy": float(max(abs(b.energy - traj.breakdowns[0].energy) for b in traj.breakdowns)),
    }
    worst = max(drifts.values())
    return worst < 1e-9, f"{len(traj.times) - 1} steps, max drift {worst:.2e}", drifts


def check_minimum_principle(runs):
    mins = {name: float(h.column("min").min()) for name, h, _ in runs}
    worst = min(mins.values())
    return worst >= -TOL_NEG, f"{len(runs)} runs, min psi_hat {worst:.3e}", mins


def check_entropy(runs):
    slacks = {name: entropy_dissipation_check(h, 1e-3, raise_on_fail=False).worst_relative_slack
              for name, h, _ in runs}
    worst = max(slacks.values())
    return worst <= 1e-3, f"{len(runs)} runs, worst relative slack {worst:.3e}", slacks


def check_xi(runs, fast: bool):
    ratios = {name: max(x.sup) / x.sup[0] - 1.0 for name, _, x in runs}
    worst = max(ratios.values())
    mesh = SlabMesh(8, 4)
    model = PolymerModel()
    grid = ConfigGrid(model.law, 4, 8)
    rng = np.random.default_rng(5)
    psi0 = rng.uniform(0.5, 1.5, (mesh.ncells,) + grid.shape)
    _, xd = density_run(psi0, mesh, model, grid, ZeroFlow(), lambda t: np.zeros(mesh.nx), 1e-2,
                        20 if fast else 100)
    ident = energy_identity_residual(xd, model.params.eps)
    ok = worst <= 1e-6 and ident <= 1e-8
    return ok, f"max sup growth {worst:.2e}, fixed-domain identity residual {ident:.2e}", \
        {"sup_growth": worst, "identity": ident}


def smooth_state(rng, grid: ConfigGrid, ncells: int):
    """Positive densities from a few low angular and radial modes."""
    r = grid.r / grid.law.radius
    th = grid.theta
    out = np.ones((ncells,) + grid.shape)
    for c in range(ncells):
        a = rng.normal(size=6) * 0.2
        out[c] += (a[0] * r**2 + a[1] * r**4)[:, None] \
            + (a[2] * r**2)[:, None] * np.cos(2 * th) + (a[3] * r**2)[:, None] * np.sin(2 * th) \
            + (a[4] * r**4)[:, None] * np.cos(4 * th) + (a[5] * r**4)[:, None] * np.sin(2 * th)
    return out


def check_stress_forms(fast: bool):
    law = SpringLaw()
    grid = ConfigGrid(law, 24, 16)
    rng = np.random.default_rng(11)
    psi = smooth_state(rng, grid, 10 if fast else 50)
    model = PolymerModel(law)
    F = kramers_stress(psi, None, model, grid).total
    G = gradient_form_stress(psi, None, model, grid).total
    rel = float(np.max(np.linalg.norm(F - G, axis=(-2, -1)) / np.linalg.norm(F, axis=(-2, -1))))
    hook = ConfigGrid(SpringLaw(HOOKEAN), 24, 16)
    qq = np.einsum("ija,ijb,ij->ab", hook.q, hook.q, hook.exact_weights)
    herr = float(np.max(np.abs(qq - np.eye(2))))
    return rel <= 1e-6 and herr <= 1e-8, f"force vs gradient {rel:.2e}, Hookean second moment {herr:.2e}", \
        {"forms": rel, "hookean": herr}


def check_truncation(fast: bool):
    grid = ConfigGrid(SpringLaw(), 8, 16)
    C = truncation_constant(grid)
    rng = np.random.default_rng(3)
    psi = rng.uniform(0.0, 40.0, (200,) + grid.shape)
    full = truncated_moment(psi, grid)
    ratios, errs = [], []
    for ell in (1, 2, 4, 8, 16):
        T = truncated_moment(psi, grid, float(ell))
        ratios.append(float(np.max(np.linalg.norm(T, axis=(-2, -1)))) / ell)
        errs.append(float(np.max(np.abs(T - full))))
    bound_ok = max(ratios) <= C
    conv_ok = all(b < a for a, b in zip(errs[:-1], errs[1:]))
    big = truncated_moment(psi, grid, float(psi.max()))
    exact = float(np.max(np.abs(big - full)))
    ok = bound_ok and conv_ok and exact == 0.0
    return ok, f"max |T|/ell {max(ratios):.3f} <= C={C:.3f}, errors {['%.2e' % e for e in errs]}", \
        {"C": C, "ratios": ratios, "errors": errs}


def check_koiter(fast: bool):
    rng = np.random.default_rng(17)
    shells = [flat_shell(16, 16, half_width=0.5), torus_shell(16, 16, half_width=0.25)]
    worst = 0.0
    trials = 6 if fast else 20
    for i in range(trials):
        shell = shells[i % 2]
        model = KoiterModel(shell)
        L = shell.half_width
        while True:
            eta = _random_field(rng, shell.shape, 0.3 * L)
            if check_admissible(shell, eta).ok:
                break
        zeta = _random_field(rng, shell.shape, 1.0)
        h = 1e-5
        fd = (koiter_energy(model, eta + h * zeta, check=False) - koiter_energy(model, eta - h * zeta, check=False)) / (2 * h)
        an = float(np.mean(koiter_gradient(model, eta) * zeta))
        worst = max(worst, abs(fd - an) / max(abs(fd), 1e-300))
    m0 = KoiterModel(shells[0])
    z = np.zeros(shells[0].shape)
    K0 = koiter_energy(m0, z)
    G0 = float(np.max(np.abs(koiter_gradient(m0, z))))
    ok = worst < 1e-5 and K0 == 0.0 and G0 == 0.0
    return ok, f"{trials} directions, worst relative error {worst:.2e}, K(0)={K0}, |K'(0)|={G0}", \
        {"fd": worst, "K0": K0, "G0": G0}


def _random_field(rng, shape, amp):
    """Smooth periodic field from the lowest Fourier modes."""
    c = np.zeros(shape, dtype=complex)
    for k1 in range(-2, 3):
        for k2 in range(-2, 3):
            c[k1, k2] = rng.normal() + 1j * rng.normal()
    f = np.real(np.fft.ifft2(c)) * shape[0] * shape[1]
    return amp * f / np.max(np.abs(f))


def check_ledger(fast: bool):
    cfg = load_preset("forced-breathing-shell")
    if fast:
        cfg.set("fluid.steps", 30)
    traj = CoupledSolver(build_problem(cfg), fixed_point_config(cfg)).run()
    rep = energy_ledger(traj, 1e-3, raise_on_fail=False)
    free = load_preset("free-shell-vibration")
    free.set("fluid.steps", 30 if fast else 150)
    ftraj = CoupledSolver(build_problem(free), fixed_point_config(free)).run()
    frep = energy_ledger(ftraj, 1e-3, raise_on_fail=False)
    energies = np.array([b.energy + b.xi_l2_half for b in ftraj.breakdowns])
    rise = float(np.max(np.diff(energies)) / energies[0])
    ok = rep.ok and frep.monotone
    return ok, (f"forced slack {rep.worst_relative_slack:.2e} (Young {rep.young_ok}), "
                f"unforced non-increasing {frep.monotone} (max relative rise {rise:.2e})"), \
        {"slack": rep.worst_relative_slack, "rise": rise, "young": rep.young_ok,
         "convection": max(map(abs, traj.convection_power + ftraj.convection_power))}


def check_convection(values: dict):
    c = values["convection"]
    return c < 1e-12, f"max convection power {c:.2e}", {"convection": c}


# Stiff shell so the elastic energy, not the regularizer, sets the response;
# on the unit period the regularizer symbol is 2 rho (2 pi)^10 at mode one.
SWEEP_OVERRIDES = (("geometry.nx", 8), ("shell.lame_lambda", 1e11), ("shell.lame_mu", 1e11),
                   ("forcing.shell_amplitude", 3e8), ("initial.psi", "random"), ("initial.seed", 5))


def sweep_config(steps: int):
    cfg = load_preset("forced-breathing-shell")
    for k, v in SWEEP_OVERRIDES:
        cfg.set(k, v)
    cfg.set("fluid.steps", steps)
    return cfg


def check_rho_sweep(fast: bool):
    cfg = sweep_config(20 if fast else 40)
    study = rho_refinement_study(lambda r: build_problem(cfg, r, mollify_initial=True), (1e-1, 1e-2, 1e-3),
                                 fixed_point_config(cfg))
    r = study.regularizer_max
    decay = [r[i] / r[i + 1] for i in range(len(r) - 1)]
    ok = study.monotone and study.regularizer_decay
    detail = (f"Cauchy monotone {study.monotone}, regularizer decay per level "
              f"{', '.join(f'{d:.6f}' for d in decay)} (need >= 10)")
    return ok, detail, {"study": study, "decay": decay}


def check_guard(fast: bool, runner=None):
    """Blow-up preset: exit 4 before |eta| reaches L; the saved trajectory replays bit for bit."""
    import contextlib
    import io
    import os
    import tempfile

    from .cli import main
    cfg = load_preset("blow-up-guard")
    L = cfg["geometry"]["half_width"]
    outputs, codes = [], []
    with tempfile.TemporaryDirectory() as tmp:
        for rep in range(2):
            root = os.path.join(tmp, f"r{rep}")
            with contextlib.redirect_stderr(io.StringIO()):
                codes.append(main(["--output-root", root, "simulate", "preset:blow-up-guard"]))
            path = os.path.join(root, "blow-up-guard", "partial_shell.csv")
            outputs.append(open(path).read() if os.path.exists(path) else None)
    if outputs[0] is None:
        return False, f"exit codes {codes}, no partial trajectory", {"codes": codes}
    rows = [ln.split(",") for ln in outputs[0].splitlines()[2:]]
    nx = (len(rows[0]) - 1) // 2
    sup = max(abs(float(v)) for r in rows for v in r[1:1 + nx])
    same = outputs[0] == outputs[1]
    ok = codes == [4, 4] and sup < L and same
    return ok, f"exit codes {codes}, saved steps {len(rows)}, max |eta| {sup:.4f} < L={L}, replay identical {same}", \
        {"codes": codes, "sup": sup, "same": same, "steps": len(rows)}


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------


def _densities(fast):
    runs = density_suite(fast)
    return [check_minimum_principle(runs), check_entropy(runs), check_xi(runs, fast)]


GROUP_NAMES = {
    "equilibrium": ("1 equilibrium fixed point",),
    "densities": ("2 minimum principle", "3 entropy inequality", "4 number density maximum principle"),
    "stress": ("5 stress form equivalence",),
    "truncation": ("6 truncated stress bound",),
    "koiter": ("7 Koiter gradient",),
    "ledger": ("8 coupled energy ledger", "9 skew convection neutrality"),
    "sweep": ("10 rho refinement",),
    "guard": ("11 admissibility guard",),
}


def _group(job: str, fast: bool) -> list[CheckResult]:
    """Run one job; an exception fails every criterion the job covers."""
    t = time.perf_counter()
    try:
        return _group_checks(job, fast)
    except Exception as exc:  # noqa: BLE001 - reported as a failed criterion
        msg = f"raised {type(exc).__name__}: {exc}"
        return [CheckResult(n, False, msg, time.perf_counter() - t, {}) for n in GROUP_NAMES[job]]


def _group_checks(job: str, fast: bool) -> list[CheckResult]:
    t = time.perf_counter()
    if job == "densities":
        res = _densities(fast)
        dt = (time.perf_counter() - t) / 3
        names = ("2 minimum principle", "3 entropy inequality", "4 number density maximum principle")
        return [CheckResult(n, bool(r[0]), r[1], dt, r[2]) for n, r in zip(names, res)]
    if job == "ledger":
        r = _timed("8 coupled energy ledger", check_ledger, fast)
        c = check_convection(r.values)
        return [r, CheckResult("9 skew convection neutrality", bool(c[0]), c[1], 0.0, c[2])]
    table = {
        "equilibrium": ("1 equilibrium fixed point", check_equilibrium),
        "stress": ("5 stress form equivalence", check_stress_forms),
        "truncation": ("6 truncated stress bound", check_truncation),
        "koiter": ("7 Koiter gradient", check_koiter),
        "sweep": ("10 rho refinement", check_rho_sweep),
        "guard": ("11 admissibility guard", check_guard),
    }
    name, fn = table[job]
    return [_timed(name, fn, fast)]


FAST_JOBS = ("equilibrium", "densities", "stress", "truncation", "koiter", "ledger", "sweep", "guard")
FULL_JOBS = FAST_JOBS


def run_suite(suite: str = "fast", jobs: int = 1) -> list[CheckResult]:
    fast = suite == "fast"
    names = FAST_JOBS if fast else FULL_JOBS
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            groups = list(ex.map(_group, names, [fast] * len(names)))
    else:
        groups = [_group(n, fast) for n in names]
    out = [r for g in groups for r in g]
    return sorted(out, key=lambda r: int(r.name.split()[0]))

