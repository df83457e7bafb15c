"""Semantic exception hierarchy for walkdiff.

Public functions never raise bare ValueError/ArithmeticError; they raise one
of the classes below so callers (and the CLI exit-code mapping) can tell
domain failures apart from usage errors.
"""


class WalkdiffError(Exception):
    """Base class for every error raised by this package."""


class NonFiniteInput(WalkdiffError, ValueError):
    """An input that must be a finite real is NaN (or infinite where finite is required)."""


class DomainError(WalkdiffError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class QuadratureDivergence(WalkdiffError, ArithmeticError):
    """Adaptive quadrature failed to converge within its refinement budget."""


class InconclusiveBoundary(WalkdiffError):
    """Boundary probes triggered neither the divergence nor the Cauchy criterion."""


class UnsupportedCase(WalkdiffError):
    """The boundary case does not admit the requested quantity (e.g. a_bar with unbounded support)."""


class NoSolution(WalkdiffError):
    """No scale factor exists for this (y, N); carries the estimated minimal N."""

    def __init__(self, msg, y=None, n0_estimate=None):
        super().__init__(msg)
        self.y = y
        self.n0_estimate = n0_estimate


class GridUnderflow(WalkdiffError):
    """Refining the time grid near s=1 failed to stabilise the step duration."""


class InvalidCase(WalkdiffError):
    """Boundary compensation requested in a configuration where it is undefined (w=0)."""


class UnsupportedModel(WalkdiffError, ValueError):
    """The requested operation has no implementation for this model."""


class UnsortedInput(WalkdiffError, ValueError):
    """A sample that must be sorted is not nondecreasing."""


class InvalidMeasure(WalkdiffError, ValueError):
    """An increment measure violates its construction contract."""


class InvalidModel(WalkdiffError, ValueError):
    """A diffusion specification violates its construction contract."""


class ConfigError(WalkdiffError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """The config text is not well-formed or contains unknown keys."""


class ValidationError(ConfigError):
    """The config parsed but a semantic check failed."""
