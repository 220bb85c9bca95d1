"""Exception hierarchy shared by all modules."""


class ScaffoldError(Exception):
    """Base class for every error raised by this package."""


class EmptyToken(ScaffoldError, ValueError):
    pass


class EmptySequence(ScaffoldError, ValueError):
    pass


class InvalidToken(ScaffoldError, ValueError):
    pass


class InvalidLabel(ScaffoldError, ValueError):
    pass


class VerifierUnavailable(ScaffoldError, RuntimeError):
    pass


class GroupTooSmall(ScaffoldError, ValueError):
    pass


class NumericalError(ScaffoldError, ArithmeticError):
    pass


class EmptyBatch(ScaffoldError, ValueError):
    pass


class AlignmentError(ScaffoldError, ValueError):
    pass


class InvalidSchedule(ScaffoldError, ValueError):
    pass


class DegenerateExample(ScaffoldError, ValueError):
    pass


class TrainingDiverged(ScaffoldError, RuntimeError):
    pass


class EmptyBenchmark(ScaffoldError, ValueError):
    pass


class PairingError(ScaffoldError, ValueError):
    pass


class InvalidItem(ScaffoldError, ValueError):
    pass


class ConflictingEntry(ScaffoldError, ValueError):
    def __init__(self, source: str, existing: str, new: str, line: int, first_line: int):
        self.source, self.existing, self.new = source, existing, new
        self.line, self.first_line = line, first_line
        super().__init__(
            f"line {line}: {source!r} -> {new!r} conflicts with {existing!r} (line {first_line})"
        )


class MalformedLine(ScaffoldError, ValueError):
    def __init__(self, line: int, text: str):
        self.line, self.text = line, text
        super().__init__(f"line {line}: expected 2 tab-separated fields, got {text!r}")


class SentinelLost(ScaffoldError, RuntimeError):
    def __init__(self, sentinel: str):
        self.sentinel = sentinel
        super().__init__(f"translator dropped or altered sentinel {sentinel!r}")


class TranslatorFailure(ScaffoldError, RuntimeError):
    pass


class DoubleInjection(ScaffoldError, ValueError):
    pass


class ConfigError(ScaffoldError, ValueError):
    pass


class WorldTooSmall(ScaffoldError, ValueError):
    pass
