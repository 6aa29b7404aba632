"""Exception hierarchy shared by every module.

Numerical failures derive from :class:`NumericalError` (CLI exit code 3);
configuration problems raise :class:`ConfigError` (exit code 2).
"""
from __future__ import annotations


class SusyLabError(Exception):
    """Base class; ``code`` is the machine-readable tag used in error JSON."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ConfigError(SusyLabError, ValueError):
    code = "config_error"

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = list(problems or [])

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["problems"] = self.problems
        return d


class NumericalError(SusyLabError):
    code = "numerical_error"


class DimensionMismatch(SusyLabError, ValueError):
    code = "dimension_mismatch"


class LengthMismatch(SusyLabError, ValueError):
    code = "length_mismatch"


# potential
class NonMorse(NumericalError):
    code = "non_morse"


class NoConvergence(NumericalError):
    code = "no_convergence"


class UnsupportedTopology(NumericalError):
    code = "unsupported_topology"

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class EmptySublevel(NumericalError):
    code = "empty_sublevel"


class BadTopology(NumericalError):
    code = "bad_topology"


# disc
class MemoryCap(NumericalError):
    code = "memory_cap"


class Underflow(NumericalError):
    code = "underflow"


# spectral
class FactorizationFailure(NumericalError):
    code = "factorization_failure"


class InsufficientK(NumericalError):
    code = "insufficient_k"


class GapTooSmall(NumericalError):
    code = "gap_too_small"


class NonPositiveMu1(NumericalError):
    code = "non_positive_mu1"


# semigroup
class StepRejected(NumericalError):
    code = "step_rejected"


class WindowEmpty(NumericalError):
    code = "window_empty"


# stochastic
class TooFewSamples(NumericalError):
    code = "too_few_samples"


class TooFewTransitions(NumericalError):
    code = "too_few_transitions"


class Blowup(NumericalError):
    code = "blowup"


# dyncheck
class StepTooLarge(NumericalError):
    code = "step_too_large"


class FlowBlowup(NumericalError):
    code = "flow_blowup"
