"""Exception types raised across the package."""


class MlgssmError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MlgssmError, ValueError):
    """Cholesky factorization failed even after jitter escalation."""


class RankDeficient(MlgssmError, ValueError):
    pass


class NonFinite(MlgssmError, FloatingPointError):
    pass


class AllComponentsFailed(MlgssmError):
    def __init__(self, index):
        super().__init__(f"every component failed to filter series {index}")
        self.index = index


class EmptyCluster(MlgssmError):
    def __init__(self, k, count):
        super().__init__(f"component {k} has effective count {count:.3g}")
        self.k = k
        self.count = count


class AllRestartsFailed(MlgssmError):
    def __init__(self, index):
        super().__init__(f"all restarts failed for series {index}")
        self.index = index


class DegenerateInput(MlgssmError, ValueError):
    pass


class UniverseMismatch(MlgssmError, ValueError):
    pass


class LengthMismatch(MlgssmError, ValueError):
    pass


class TooShort(MlgssmError, ValueError):
    pass


class NonPositiveValue(MlgssmError, ValueError):
    def __init__(self, index):
        super().__init__(f"non-positive value at index {index}")
        self.index = index


class ConstantSeries(MlgssmError, ValueError):
    pass


class SchemaError(MlgssmError, ValueError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class RaggedSeries(SchemaError):
    pass


class VersionMismatch(MlgssmError, ValueError):
    pass
