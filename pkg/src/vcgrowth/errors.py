"""Exception taxonomy shared across the pipeline.

Every error raised by the package derives from :class:`PipelineError`, so
callers (the CLI in particular) can catch one base class and report the
concrete error name.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all package-specific errors."""


# ---------------------------------------------------------------------------
# panel ingestion / alignment


class MissingColumn(PipelineError):
    """A required column is absent from an input file."""


class UnbalancedPanel(PipelineError):
    """At least one country does not cover every panel year."""


class NonFiniteValue(PipelineError):
    """A NaN or infinity was found where a finite number is required."""


class DuplicateRow(PipelineError):
    """The same (country, year) appears more than once."""


class InvalidValue(PipelineError):
    """A value violates a range or ordering invariant (row-addressed)."""


class LagTooDeep(PipelineError):
    """Requested lag depth leaves fewer than one usable period."""


# ---------------------------------------------------------------------------
# preprocessing


class SeriesTooShort(PipelineError):
    """A time series has too few points for the requested operation."""


class NonFiniteInput(PipelineError):
    """A series passed to a numeric routine contains NaN or infinity."""


class TooFewKnots(PipelineError):
    """Spline interpolation needs at least three knot years."""


class NonPositiveForLog(PipelineError):
    """A value that must be logged is zero or negative."""


class MissingSeries(PipelineError):
    """A required input series (or one of its entries) is absent."""


# ---------------------------------------------------------------------------
# distributional statistics


class ZeroTotalIncome(PipelineError):
    """An income grid sums to zero, so shares are undefined."""


class ZeroIncomeCell(PipelineError):
    """A statistic requiring strictly positive cells saw a zero centile."""


class ZeroQuintileIncome(PipelineError):
    """A quintile whose log mean is requested has zero total income."""


# ---------------------------------------------------------------------------
# design construction


class NonFiniteDriver(PipelineError):
    """A driver value passed to basis evaluation is NaN or infinite."""


class DimensionMismatch(PipelineError):
    """Array shapes passed to the design builder are inconsistent."""


# ---------------------------------------------------------------------------
# estimation


class RankDeficient(PipelineError):
    """The stacked regressor matrix does not have full column rank."""


class NonPositiveWeight(PipelineError):
    """Weighted least squares received a weight that is not > 0."""


class SingularMeat(PipelineError):
    """The weighted cross-product matrix is singular; no covariance."""


# ---------------------------------------------------------------------------
# curve reporting


class UnknownDriver(PipelineError):
    """A curve was requested for a driver the basis does not contain."""


class NotConvergedFit(PipelineError):
    """A non-converged fit was used where a converged one is required."""


class UnmappedCountry(PipelineError):
    """A country is missing from the group mapping."""


# ---------------------------------------------------------------------------
# simulation / CLI


class InvalidSpec(PipelineError):
    """A simulation specification file failed validation."""
