"""Exception hierarchy shared by all solver modules.

Each exception carries the process exit code the CLI reports for it, so the
harness can map failures to machine-parseable categories without a lookup
table scattered across call sites.
"""

from __future__ import annotations


class PolyshellError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 1
    category = "error"


class InequalityViolated(PolyshellError):
    exit_code = 1
    category = "inequality"

    def __init__(self, message: str, step: int | None = None, breakdown: dict | None = None):
        super().__init__(message)
        self.step = step
        self.breakdown = breakdown or {}


class ConfigError(PolyshellError):
    exit_code = 2
    category = "config"

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class SolverDiverged(PolyshellError):
    exit_code = 3
    category = "divergence"


class NoConvergence(SolverDiverged):
    category = "no-convergence"


class AssemblyFailure(SolverDiverged):
    category = "assembly"


class PoissonSolveFailure(SolverDiverged):
    category = "poisson"


class QuadratureFailure(SolverDiverged):
    category = "quadrature"


class OutOfDomain(PolyshellError, ValueError):
    """A configuration vector left the spring's admissible ball."""

    exit_code = 3
    category = "out-of-domain"


class AdmissibilityViolation(PolyshellError):
    """Shell displacement left the admissible set; the run must stop."""

    exit_code = 4
    category = "admissibility"

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
