"""Typed exceptions shared across the package.

Every error that aborts an analysis names the offending variable, level,
or stratum so batch runs can be debugged from the message alone.
"""


class EqDecompError(Exception):
    """Base class for all package errors."""


class SchemaError(EqDecompError):
    """Unknown variable/level names or malformed table definitions."""


class ValidationError(EqDecompError):
    """Configuration invalid: overlapping sets, role collisions, bad config."""


class UndefinedConditionalError(EqDecompError):
    """A conditional distribution was requested on zero-probability evidence."""

    def __init__(self, message, evidence=None):
        super().__init__(message)
        self.evidence = dict(evidence) if evidence else {}


class PositivityError(EqDecompError):
    """A required conditional probability is zero (or a fitted one hit 0/1)."""

    def __init__(self, message, stratum=None):
        super().__init__(message)
        self.stratum = dict(stratum) if stratum else {}


class CommonSupportError(PositivityError):
    """A (target, allowable-covariate) configuration lacks support in one group."""


class DegenerateResponseError(EqDecompError):
    """Model response is constant within the fitting group."""


class NonConvergenceError(EqDecompError):
    """Model fitting failed to converge; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace else []


class InfeasibleCohortError(EqDecompError):
    """Cohort selection probability too small to generate the requested rows."""


class BootstrapError(EqDecompError):
    """Too many bootstrap replicates failed."""
