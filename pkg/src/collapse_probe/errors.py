"""Exception hierarchy shared by all modules."""


class CollapseProbeError(Exception):
    """Base class for errors raised by this package."""


class InvalidConfig(CollapseProbeError, ValueError):
    """A configuration value violates a documented invariant."""


class DegeneratePattern(CollapseProbeError):
    """The pattern integrates to (numerically) zero over the screen."""


class TooFewSamples(CollapseProbeError, ValueError):
    pass


class OutOfRangeSample(CollapseProbeError, ValueError):
    pass


class NonConvergent(CollapseProbeError, RuntimeError):
    pass


class ParseError(CollapseProbeError, ValueError):
    """Config text could not be parsed; message carries line/key context."""


class ValidationError(InvalidConfig):
    """Parsed config is syntactically fine but violates an invariant."""
