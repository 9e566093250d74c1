"""Exception hierarchy shared across the package.

Everything raised on purpose derives from :class:`SeasoncastError` so the CLI
can map failures to exit codes.  Exceptions flagged ``runtime = True`` indicate
a failure of the computation itself (e.g. a diverging optimization) rather
than bad input data.
"""


class SeasoncastError(Exception):
    """Base class for all errors raised by this package."""

    runtime = False


class DimensionError(SeasoncastError):
    """Array shapes do not line up."""


class CalendarError(SeasoncastError):
    """A month stamp is out of range or two series are misaligned in time."""


class MaskError(SeasoncastError):
    """A region mask is empty or contains values other than 0/1."""


class CoverageError(SeasoncastError):
    """A requested time range is not fully covered by the available data."""


class ParseError(SeasoncastError):
    """A data file failed to parse; the message names the byte offset."""


class ValidationError(SeasoncastError):
    """A configuration object violates its invariants."""


class DegenerateStatsError(SeasoncastError):
    """Statistics cannot be formed (zero variance, degenerate fit)."""


class InsufficientHistoryError(SeasoncastError):
    """Not enough preceding months to assemble the requested input."""


class ConfigurationError(SeasoncastError):
    """Mismatched components, e.g. a checkpoint applied to the wrong case."""


class CheckpointError(SeasoncastError):
    """A checkpoint directory is corrupt; the message names the tensor."""


class GraphStateError(SeasoncastError):
    """backward() called without a recorded forward pass."""

    runtime = True


class DivergenceError(SeasoncastError):
    """Training produced a non-finite loss."""

    runtime = True
