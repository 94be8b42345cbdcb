"""Build solver objects from a :class:`RunConfig` and run one subcommand."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..coupler import (CoupledProblem, CoupledSolver, FixedPointConfig, RegularizationKernel, Trajectory,
                       energy_ledger, mollify_initial_shell, rho_refinement_study)
from ..diagnostics import EnergyBreakdown, csv_schema_line
from ..errors import AdmissibilityViolation, InequalityViolated
from ..fokker_planck import (ConfigDensity, FPHistory, FPSolver, entropy_dissipation_check,
                             minimum_principle_check)
from ..geometry import ShellState, flat_shell
from ..number_density import NumberDensity, XiDiagnostics, XiSolver, marginalize
from ..polymer_model import ConfigGrid, PhysicalParams, PolymerModel, SpringLaw, maxwellian
from ..shell_dynamics import KoiterModel, ShellForce, shell_energy, step_shell
from ..spatial import ShearFlow, SlabMesh, ZeroFlow, prepare_step
from .config import RunConfig
from .io import write_binary, write_csv, write_fields

log = logging.getLogger(__name__)

SWEEP_RHOS = (1e-1, 1e-2, 1e-3)


@dataclass
class RunResult:
    exit_code: int
    directory: Path
    summary: str
    data: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_mesh(cfg: RunConfig) -> SlabMesh:
    g = cfg["geometry"]
    return SlabMesh(g["nx"], g["nz"], g["height"], g["half_width"])


def build_model(cfg: RunConfig) -> tuple[PolymerModel, ConfigGrid]:
    p = cfg["polymer"]
    law = SpringLaw(p["law"], p["b"], p["K"], p["d"])
    params = PhysicalParams(mu=cfg["fluid"]["mu"], eps=p["eps"], lam=p["lam"], k=p["k"], eth=p["eth"],
                            rouse=np.array([[p["rouse"]]]))
    return PolymerModel(law, params), ConfigGrid(law, p["nr"], p["ntheta"], p["m"])


def build_koiter(cfg: RunConfig, mesh: SlabMesh) -> KoiterModel:
    s, g = cfg["shell"], cfg["geometry"]
    shell = flat_shell(mesh.nx, 1, height=mesh.height, half_width=mesh.half_width)
    return KoiterModel(shell, s["lame_lambda"], s["lame_mu"], s["thickness"], s["weighted_measure"],
                       g["gamma_min"])


def build_kernel(cfg: RunConfig, rho: float | None = None) -> RegularizationKernel:
    c = cfg["coupling"]

    def width(v):
        return None if v < 0 else v

    return RegularizationKernel(cfg["shell"]["rho"] if rho is None else rho, width(c["time_width"]),
                                width(c["space_width"]), width(c["shell_width"]))


def shell_load(cfg: RunConfig):
    f = cfg["forcing"]
    A, freq, mode = f["shell_amplitude"], f["shell_frequency"], f["shell_mode"]
    if f["shell"] == "none" or A == 0.0:
        return None
    if f["shell"] == "breathing":
        return lambda x, t: A * np.cos(2 * np.pi * mode * x) * np.sin(2 * np.pi * freq * t)
    return lambda x, t: A * np.cos(2 * np.pi * mode * x)


def body_force(cfg: RunConfig):
    f = cfg["forcing"]
    A = f["body_amplitude"]
    if f["body"] == "none" or A == 0.0:
        return None

    def shear(points, t):
        out = np.zeros_like(points)
        out[..., 0] = A * np.sin(np.pi * points[..., 1])
        return out

    return shear


def initial_shell(cfg: RunConfig, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i = cfg["initial"]
    mode = np.cos(2 * np.pi * i["eta_mode"] * x)
    eta0 = i["eta_amplitude"] * mode if i["eta"] == "cosine" else np.zeros_like(x)
    return eta0, i["velocity_amplitude"] * mode


def initial_psi(cfg: RunConfig, ncells: int, grid: ConfigGrid) -> np.ndarray:
    i = cfg["initial"]
    shape = (ncells,) + grid.shape
    if i["psi"] == "equilibrium":
        return np.ones(shape)
    rng = np.random.default_rng(i["seed"])
    a = i["psi_amplitude"]
    return rng.uniform(1.0 - a, 1.0 + a, shape)


def fixed_point_config(cfg: RunConfig) -> FixedPointConfig:
    c = cfg["coupling"]
    return FixedPointConfig(c["theta"], c["max_iterations"], c["tol"], c["window_steps"] or None,
                            c["min_window_steps"], c["patience"])


def build_problem(cfg: RunConfig, rho: float | None = None, mollify_initial: bool = False) -> CoupledProblem:
    mesh = build_mesh(cfg)
    model, grid = build_model(cfg)
    kernel = build_kernel(cfg, rho)
    eta0, eta1 = initial_shell(cfg, mesh.x)
    if mollify_initial:
        eta0 = mollify_initial_shell(eta0, kernel.rho)
    return CoupledProblem(mesh, model, grid, build_koiter(cfg, mesh), kernel, cfg["fluid"]["dt"],
                          cfg["fluid"]["steps"], cfg["polymer"]["ell"], body_force(cfg), shell_load(cfg),
                          eta0, eta1, None, initial_psi(cfg, mesh.ncells, grid), cfg["geometry"]["margin"])


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def write_breakdowns(path, breakdowns: list[EnergyBreakdown]):
    header = EnergyBreakdown.csv_header().split(",")
    write_csv(path, header, [b.csv_row().split(",") for b in breakdowns], csv_schema_line())


def write_shell_series(path, times, eta, V):
    eta, V = np.asarray(eta), np.asarray(V)
    nx = eta.shape[1] if eta.ndim == 2 else 0
    header = ["t"] + [f"eta_{i}" for i in range(nx)] + [f"V_{i}" for i in range(nx)]
    rows = [[t, *e, *v] for t, e, v in zip(times, eta, V)]
    write_csv(path, header, rows, csv_schema_line())


def write_fixed_point(path, history):
    write_csv(path, ["window_start", "iteration", "residual"], history, csv_schema_line())


def write_snapshot(directory: Path, index: int, solver: CoupledSolver, traj: Trajectory, n: int):
    """Vertex velocities and deformed positions, plus cell-centred number density."""
    mesh = solver.problem.mesh
    nx, nz = mesh.nx, mesh.nz
    U = traj.velocity[n]
    geom = mesh.geometry(traj.mesh_eta[n])
    vid = np.arange(nx)[None, :] * (nz + 1) + np.arange(nz + 1)[:, None]  # (nz + 1, nx), x fastest
    vel = np.zeros((vid.size, 3))
    vel[:, 0] = U[0, vid.ravel()]
    vel[:, 1] = U[1, vid.ravel()]
    pos = np.zeros((vid.size, 3))
    pos[:, 0] = np.tile(mesh.x, nz + 1)
    pos[:, 1] = geom.Z.T.ravel()
    write_fields(directory / f"fields_{index:05d}.vtk", (nx, nz + 1), (mesh.h, mesh.height / nz), (0.0, 0.0),
                 {"velocity": vel, "position": pos}, title=f"polyshell velocity t={traj.times[n]!r}")
    cid = np.arange(nx)[None, :] * nz + np.arange(nz)[:, None]
    xi = np.asarray(traj.xi[n])[cid.ravel()]
    write_fields(directory / f"xi_{index:05d}.vtk", (nx, nz), (mesh.h, mesh.height / nz),
                 (0.5 * mesh.h, 0.5 * mesh.height / nz), {"xi": xi},
                 title=f"polyshell number density t={traj.times[n]!r}")


def write_maxwellian(path, cfg: RunConfig):
    model, grid = build_model(cfg)
    table = maxwellian(model.law, grid.nr, grid.ntheta, grid.m)
    write_binary(path, table.values, table.header())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def run_simulate(cfg: RunConfig, out: Path) -> RunResult:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps())
    solver = CoupledSolver(build_problem(cfg), fixed_point_config(cfg))
    try:
        traj = solver.run()
    except AdmissibilityViolation as exc:
        part = getattr(exc, "trajectory", None)
        if part is not None:
            write_shell_series(out / "partial_shell.csv", part.times, part.eta, part.V)
            if part.breakdowns:
                write_breakdowns(out / "partial_diagnostics.csv", part.breakdowns)
            write_fixed_point(out / "fixed_point.csv", part.fixed_point)
        rep = exc.report
        (out / "termination.txt").write_text(
            f"admissibility violation: {exc}\n"
            + (f"sup_eta={rep.sup_eta!r}\nmargin_to_L={rep.margin_to_L!r}\n" if rep is not None else ""))
        raise
    write_breakdowns(out / "diagnostics.csv", traj.breakdowns)
    write_shell_series(out / "shell.csv", traj.times, traj.eta, traj.V)
    write_fixed_point(out / "fixed_point.csv", traj.fixed_point)
    every = cfg["output"]["fields_every"]
    levels = range(0, len(traj.times), every) if every else [len(traj.times) - 1]
    for idx, n in enumerate(levels):
        write_snapshot(out, idx, solver, traj, n)
    if cfg["output"]["checkpoint"] and traj.psi_final is not None:
        write_binary(out / "psi_final.bin", traj.psi_final,
                     {"law": cfg["polymer"]["law"], "t": float(traj.times[-1]), "kind": "psi_hat"})
    report = energy_ledger(traj, cfg["coupling"]["tol_ineq"], raise_on_fail=False)
    windows = ", ".join(f"[{s}, {s + n}) in {it} it" for s, n, it in traj.windows)
    ratios = _contraction(traj.fixed_point)
    summary = "\n".join([
        report.summary(),
        f"windows: {windows}",
        f"fixed_point_contraction={ratios:.3e}",
        f"max_convection_power={max(map(abs, traj.convection_power), default=0.0):.3e}",
        f"max_divergence={max(traj.divergence, default=0.0):.3e}",
        f"min_psi={min(traj.psi_min):.3e}",
        f"max_abs_eta={float(np.max(np.abs(traj.array('eta')))):.6e}",
    ])
    (out / "ledger.txt").write_text(summary + "\n")
    if not report.ok:
        b = traj.breakdowns[report.worst_step]
        raise InequalityViolated("energy inequality violated", step=report.worst_step,
                                 breakdown={"energy": b.energy, "dissipation": b.dissipation, "work": b.work,
                                            "relative_slack": report.worst_relative_slack})
    return RunResult(0, out, summary, {"trajectory": traj, "ledger": report})


def _contraction(history) -> float:
    """Largest ratio of consecutive residuals within a window."""
    ratios = [b[2] / a[2] for a, b in zip(history[:-1], history[1:]) if a[0] == b[0] and a[2] > 0]
    return max(ratios, default=0.0)


def prescribed_shell(cfg: RunConfig, mesh: SlabMesh):
    p = cfg["prescribed"]
    A, f = p["shell_amplitude"], p["shell_frequency"]
    if p["shell_motion"] == "static" or A == 0.0:
        return lambda t: np.zeros(mesh.nx)
    return lambda t: A * np.sin(2 * np.pi * f * t) * np.cos(2 * np.pi * mesh.x)


def run_fpk(cfg: RunConfig, out: Path) -> RunResult:
    """Density equations under a prescribed flow and shell motion."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps())
    mesh = build_mesh(cfg)
    model, grid = build_model(cfg)
    p = cfg["polymer"]
    fp = FPSolver(model, grid, p["ell"], p["n_config"] or None)
    xs = XiSolver(p["eps"])
    flow = ShearFlow(cfg["prescribed"]["shear_rate"]) if cfg["prescribed"]["flow"] == "shear" else ZeroFlow()
    eta = prescribed_shell(cfg, mesh)
    dt, steps = cfg["fluid"]["dt"], cfg["fluid"]["steps"]
    state = ConfigDensity(initial_psi(cfg, mesh.ncells, grid), 0.0)
    xi = marginalize(state.psi_hat, grid)
    geom = mesh.geometry(eta(0.0))
    hist, xdiag = FPHistory(), XiDiagnostics()
    hist.append(fp.initial_record(state, geom))
    xdiag.record(xi, geom, 0.0, keep=False)
    grad = 0.0
    for n in range(steps):
        t = n * dt
        g1 = mesh.geometry(eta(t + dt))
        ops = prepare_step(geom, g1, flow, t, dt)
        state, rec = fp.step(state, ops)
        xi, gint = xs.step(xi, ops)
        grad += gint
        hist.append(rec)
        xdiag.record(xi, g1, grad, keep=False)
        geom = g1
    ent = entropy_dissipation_check(hist, cfg["coupling"]["tol_ineq"], raise_on_fail=False)
    min_ok = minimum_principle_check(hist, raise_on_fail=False)
    sup0 = xdiag.sup[0]
    xi_ok = max(xdiag.sup) <= sup0 * (1 + 1e-6)
    header = ["t", "mass", "min", "entropy", "fisher_x", "fisher_q", "drag_power", "xi_sup", "xi_min", "xi_l2",
              "grad_xi"]
    rows = [[r.t, r.mass, r.min, r.entropy, r.fisher_x, r.fisher_q, r.drag_power, s, m, l2, gi]
            for r, s, m, l2, gi in zip(hist.records, xdiag.sup, xdiag.min, xdiag.l2, xdiag.grad_integral)]
    write_csv(out / "fpk.csv", header, rows, csv_schema_line())
    write_maxwellian(out / "maxwellian.bin", cfg)
    if cfg["output"]["checkpoint"]:
        write_binary(out / "psi_final.bin", state.psi_hat, {"law": p["law"], "t": float(state.t), "kind": "psi_hat"})
    summary = "\n".join([
        f"entropy ok={ent.ok} worst_relative_slack={ent.worst_relative_slack:.3e} step={ent.worst_step}",
        f"minimum principle ok={min_ok} min_psi={ent.min_psi:.3e}",
        f"xi maximum principle ok={xi_ok} sup0={sup0!r} max_sup={max(xdiag.sup)!r}",
    ])
    (out / "report.txt").write_text(summary + "\n")
    if not (ent.ok and min_ok and xi_ok):
        raise InequalityViolated("density invariant violated: " + summary.replace("\n", "; "),
                                 step=ent.worst_step)
    return RunResult(0, out, summary, {"history": hist, "xi": xdiag, "entropy": ent})


def run_shell(cfg: RunConfig, out: Path) -> RunResult:
    """Shell without fluid: eta_tt + K'(eta) + rho L'(eta) = g."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps())
    mesh = build_mesh(cfg)
    model = build_koiter(cfg, mesh)
    rho = cfg["shell"]["rho"]
    dt, steps = cfg["fluid"]["dt"], cfg["fluid"]["steps"]
    load = shell_load(cfg)
    eta0, eta1 = initial_shell(cfg, mesh.x)
    state = ShellState(eta0.reshape(-1, 1), eta1.reshape(-1, 1), 0.0)
    E0 = shell_energy(model, state, rho)
    work = 0.0
    rows = [[0.0, E0, 0.0, *state.eta.ravel()]]
    for n in range(steps):
        t = n * dt
        g = np.zeros(mesh.nx) if load is None else load(mesh.x, t + 0.5 * dt)
        new = step_shell(state, ShellForce(g.reshape(-1, 1)), model, rho, dt)
        work += float(np.mean(g * (new.eta - state.eta).ravel()))
        state = new
        rows.append([state.t, shell_energy(model, state, rho), work, *state.eta.ravel()])
    header = ["t", "energy", "work"] + [f"eta_{i}" for i in range(mesh.nx)]
    write_csv(out / "shell.csv", header, rows, csv_schema_line())
    drift = max(abs(r[1] - E0 - r[2]) for r in rows) / max(E0, max(abs(r[2]) for r in rows), 1e-300)
    summary = f"shell energy balance relative drift={drift:.3e}"
    (out / "report.txt").write_text(summary + "\n")
    if drift > cfg["coupling"]["tol_ineq"]:
        raise InequalityViolated("shell energy balance violated: " + summary)
    return RunResult(0, out, summary, {"drift": drift, "rows": rows})


def run_sweep(cfg: RunConfig, out: Path, rhos=SWEEP_RHOS) -> RunResult:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.dumps())
    study = rho_refinement_study(lambda r: build_problem(cfg, r, mollify_initial=True), rhos,
                                 fixed_point_config(cfg))
    rows = [[r, L] for r, L in zip(study.rhos, study.regularizer_max)]
    write_csv(out / "sweep_levels.csv", ["rho", "max_rho_L"], rows, csv_schema_line())
    rows = [[i, a, b, c] for i, (a, b, c) in enumerate(zip(study.cauchy_u, study.cauchy_eta, study.cauchy_xi))]
    write_csv(out / "sweep_cauchy.csv", ["pair", "du", "deta", "dxi"], rows, csv_schema_line())
    (out / "sweep.txt").write_text(study.summary() + "\n")
    return RunResult(0, out, study.summary(), {"study": study})
