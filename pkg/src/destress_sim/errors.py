"""Exception types raised by the simulator.

Every error derives from :class:`SimulatorError` so callers (the CLI in
particular) can map whole families to exit codes.
"""

from __future__ import annotations


class SimulatorError(Exception):
    """Base class for all simulator errors."""


class ConfigInvalid(SimulatorError):
    """Experiment configuration failed validation."""


class NumericalError(SimulatorError):
    """Base class for failures of the numerical routines."""


# topology
class NotConnected(SimulatorError):
    pass


class BadDimensions(SimulatorError):
    pass


# mixing
class NotStochastic(NumericalError):
    pass


class NotSymmetric(NumericalError):
    pass


# model / data
class DimensionMismatch(SimulatorError):
    pass


class EmptyShard(SimulatorError):
    pass


class TooFewSamples(SimulatorError):
    pass


class DataIOError(SimulatorError, OSError):
    """The data file could not be opened or read."""


class ParseError(SimulatorError):
    def __init__(self, line: int, msg: str = "") -> None:
        self.line = line
        super().__init__(f"line {line}: {msg or 'could not parse value'}")


class RaggedRowError(ParseError):
    def __init__(self, line: int, expected: int, got: int) -> None:
        super().__init__(line, f"expected {expected} fields, got {got}")
        self.expected = expected
        self.got = got


# algorithms
class BadAlpha(NumericalError):
    pass


class ShardMismatch(SimulatorError):
    pass


class NonFiniteError(NumericalError):
    """A run diverged: some state entry became inf or nan."""

    def __init__(self, t: int, s: int) -> None:
        self.t = t
        self.s = s
        super().__init__(f"non-finite state at outer step {t}, inner step {s}")
