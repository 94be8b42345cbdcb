"""Dilute polymer solution beneath a nonlinear elastic shell: solvers and diagnostics.

Modules: geometry (shell and moving domain), polymer_model (spring laws,
Maxwellians, configuration grid), fokker_planck and number_density (density
equations), stress, shell_dynamics (Koiter shell), fluid (moving-mesh
Navier-Stokes), coupler (regularization, fixed point, energy ledger),
diagnostics and the harness subpackage (config, output, presets, CLI).
"""

from .errors import (AdmissibilityViolation, ConfigError, InequalityViolated, NoConvergence, PolyshellError,
                     SolverDiverged)

__version__ = "0.1.0"

__all__ = ["AdmissibilityViolation", "ConfigError", "InequalityViolated", "NoConvergence", "PolyshellError",
           "SolverDiverged", "__version__"]
