"""Command-line entry point.

Exit codes: 0 success, 1 inequality or invariant violation, 2 configuration
error, 3 solver divergence, 4 admissibility termination (partial results
saved).  Failures print one machine-parseable line to stderr::

    polyshell-error category=<name> exit=<code> key=<key or -> message=<text>
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, PolyshellError
from .config import RunConfig, help_text, load_config
from .io import OUTPUT_ROOT_ENV, output_root
from .runners import run_fpk, run_shell, run_simulate, run_sweep
from .scenarios import CATALOGUE, load_preset

RUNNERS = {"simulate": run_simulate, "fpk": run_fpk, "shell": run_shell, "sweep-rho": run_sweep}


def resolve_config(source: str, overrides: list[str]) -> RunConfig:
    """A path, or ``preset:<name>``, followed by ``section.key=value`` overrides."""
    if source.startswith("preset:"):
        cfg = load_preset(source.split(":", 1)[1])
    else:
        cfg = load_config(source)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value", key=item)
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    presets = "\n".join(f"  {s.name} ({s.command}): {s.description}" for s in CATALOGUE)
    epilog = (f"presets (use preset:<name> as the config argument):\n{presets}\n\n{help_text()}\n\n"
              f"exit codes: 0 ok, 1 inequality, 2 config, 3 divergence, 4 admissibility\n"
              f"output root: ${OUTPUT_ROOT_ENV} or --output-root (default ./polyshell_output)")
    p = argparse.ArgumentParser(prog="polyshell", description="Polymer fluid under an elastic shell.",
                                epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--output-root", help="directory receiving run folders")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"simulate": "full coupled run", "fpk": "density equations under a prescribed flow and shell",
             "shell": "shell-only dynamics", "sweep-rho": "refinement study in the regularization parameter"}
    for name, h in helps.items():
        s = sub.add_parser(name, help=h)
        s.add_argument("config", help="config file or preset:<name>")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration key")
    v = sub.add_parser("validate", help="run the invariant and acceptance checks")
    v.add_argument("--suite", choices=("fast", "full"), default="fast")
    v.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sub.add_parser("presets", help="list the preset catalogue")
    return p


def _error_line(exc: PolyshellError) -> str:
    key = getattr(exc, "key", None) or "-"
    msg = str(exc).replace("\n", " ")
    return f"polyshell-error category={exc.category} exit={exc.exit_code} key={key} message={msg}"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            for s in CATALOGUE:
                print(f"{s.name}\t{s.command}\t{s.description}")
            return 0
        if args.command == "validate":
            from .suite import run_suite
            results = run_suite(args.suite, args.jobs)
            for r in results:
                print(r.line())
            return 0 if all(r.ok for r in results) else 1
        cfg = resolve_config(args.config, args.set)
        root = Path(args.output_root) if args.output_root else output_root()
        result = RUNNERS[args.command](cfg, root / cfg["output"]["name"])
        print(result.summary)
        return result.exit_code
    except PolyshellError as exc:
        print(_error_line(exc), file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entry()
