"""Exception hierarchy for morphint."""


class MorphIntError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(MorphIntError, ValueError):
    pass


class DegenerateInterval(MorphIntError, ValueError):
    pass


class VolumeOverflow(MorphIntError, OverflowError):
    pass


class NonPositiveTrial(MorphIntError, ValueError):
    pass


class InvalidRunConfig(MorphIntError, ValueError):
    pass


class InsufficientBlocks(InvalidRunConfig):
    pass


class UnknownName(MorphIntError, KeyError):
    pass


class BadParams(MorphIntError, ValueError):
    pass


class ExpressionSyntaxError(MorphIntError, SyntaxError):
    """Malformed expression; ``offset`` is the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifier(MorphIntError, NameError):
    pass


class ArityError(MorphIntError, TypeError):
    pass


class TrajectoryAborted(MorphIntError, RuntimeError):
    def __init__(self, message: str, trajectory: int | None = None):
        super().__init__(message if trajectory is None else f"trajectory {trajectory}: {message}")
        self.trajectory = trajectory


class NonFiniteGradient(TrajectoryAborted):
    pass


class ReflectionLimit(MorphIntError, RuntimeError):
    pass


class TuningFailed(MorphIntError, RuntimeError):
    pass


class BadSplitConfig(MorphIntError, ValueError):
    pass


class UnsupportedDomain(MorphIntError, ValueError):
    pass


class NonFiniteSample(MorphIntError, ArithmeticError):
    pass


class LiftOverflow(MorphIntError, OverflowError):
    pass
