'''Exception hierarchy for scramblesim.'''


class ScrambleSimError(Exception):
    '''Base class for every error raised by the package.'''

    exit_code = 1

    def to_dict(self) -> dict:
        return {'error': type(self).__name__, 'message': str(self)}


class CircuitSpecError(ScrambleSimError, ValueError):
    exit_code = 2


class InversionError(ScrambleSimError, ValueError):
    pass


class NonCliffordGateError(ScrambleSimError, ValueError):
    pass


class ResourceLimitError(ScrambleSimError, MemoryError):
    pass


class NormalizationError(ScrambleSimError, ArithmeticError):
    pass


class EmptyResultError(ScrambleSimError, ValueError):
    pass


class BranchCapExceeded(ScrambleSimError):
    '''Raised when the branch cap is hit. Carries the stats gathered so far.'''

    def __init__(self, message: str, stats):
        super().__init__(message)
        self.stats = stats

    def to_dict(self) -> dict:
        out = super().to_dict()
        out['stats'] = self.stats.to_dict()
        return out


class ManifestError(ScrambleSimError, ValueError):
    '''Malformed JSON input. Names the offending field and, for syntax errors, the byte offset.'''

    exit_code = 2

    def __init__(self, message: str, field: str | None = None, offset: int | None = None):
        super().__init__(message)
        self.field = field
        self.offset = offset

    def to_dict(self) -> dict:
        out = super().to_dict()
        out['field'] = self.field
        out['offset'] = self.offset
        return out


class VerificationError(ScrambleSimError):
    '''An engine cross-check failed. Carries the per-check report.'''

    def __init__(self, message: str, checks: list):
        super().__init__(message)
        self.checks = checks

    def to_dict(self) -> dict:
        out = super().to_dict()
        out['checks'] = self.checks
        return out
