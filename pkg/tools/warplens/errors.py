"""
Exceptions and warning categories for warp-lens.

Every operation error is a subclass of WarpLensError so the CLI can map
any of them to exit status 1 in one place.
"""


class WarpLensError(Exception):
    """Root of all warp-lens errors."""


class ConfigError(WarpLensError):
    pass


# Wasm model

class MalformedBinary(WarpLensError):
    """The input is not a well-formed Wasm binary."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" (at byte {offset:#x})" if offset is not None else ""
        super().__init__(f"{message}{where}")


class EncodeOverflow(WarpLensError):
    """An index or immediate does not fit its binary encoding."""


# Mutation engine

class NoCandidates(WarpLensError):
    """A mutation site has no replacement candidates."""


class IllegalSpan(WarpLensError):
    """A deletion span includes an operand produced by an operator."""


# Execution harness

class SpawnFailure(WarpLensError):
    """The runtime process could not be launched."""


class MeasurementFailure(WarpLensError):
    """A timed run trapped, timed out or exited nonzero."""


class DumpUnsupported(WarpLensError):
    pass


class DumpParseError(WarpLensError):
    pass


# Scoring

class NonPositiveRatio(WarpLensError):
    pass


class ZeroTiming(WarpLensError):
    pass


# Machine diff / report

class UnpairableFunctions(WarpLensError):
    """Original and mutant dumps share no function index."""


class OutputUnwritable(WarpLensError):
    pass


# Mock runtime

class Trap(WarpLensError):
    pass


class StepBudgetExceeded(WarpLensError):
    pass


class UnsupportedModule(WarpLensError):
    """The module uses imports, tables or instructions the mock cannot execute."""


# Warnings: the operation still returns, the result carries a flag.

class UnsupportedFeature(UserWarning):
    """A function uses constructs outside the mutable core subset."""


class UnstableMeasurement(UserWarning):
    """Interquartile spread of a timing sample exceeds the threshold."""
