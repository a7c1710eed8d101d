"""Exception hierarchy.

Every error carries a short ``category`` string. The command line front end
prints it as the first token of its single-line failure message, so scripts
can dispatch on it without parsing prose.
"""

from __future__ import annotations


class LabError(Exception):
    category = "error"


class ConfigError(LabError):
    category = "config"


class ChartDomainError(LabError, ValueError):
    category = "chart-domain"


class SignatureError(LabError):
    category = "signature"


class IntegratorError(LabError):
    category = "integrator"


class WeightError(LabError):
    category = "weight"


class LowerBoundError(LabError):
    category = "lower-bound"


class ConvergenceError(LabError):
    category = "convergence"


class FitError(LabError):
    category = "fit"


class CFLError(LabError):
    category = "cfl"


class BlowupError(LabError):
    category = "blowup"


class DecayGateError(LabError):
    category = "decay-gate"


class SmallnessError(LabError):
    category = "smallness"


class DivergenceError(LabError):
    category = "divergence"


class ResidualError(LabError):
    category = "residual"


class InadmissibleError(LabError):
    category = "inadmissible"


class NoCaseError(LabError):
    category = "no-case"


class ParseError(LabError):
    category = "parse"
