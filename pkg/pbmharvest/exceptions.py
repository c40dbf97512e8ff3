from typing import Optional


class HarvestError(Exception):
    def __init__(self, message: str, diagnostics: Optional[list[str]] = None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class LogFormatError(HarvestError):
    """A log or table file could not be parsed.

    ``line_no`` is 1-based; ``None`` when the problem is not tied to a line.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line_no: Optional[int] = None,
    ):
        location = ""
        if path is not None:
            location = f"{path}:{line_no}: " if line_no is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line_no = line_no


class LogConsistencyError(HarvestError):
    pass


class ProvenanceError(HarvestError):
    pass


class ConfigError(HarvestError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class DomainError(HarvestError, ValueError):
    pass


class EstimationError(HarvestError):
    pass


class NoInterventionalDataError(EstimationError):
    def __init__(self, message: str = "no interventional data", diagnostics=None):
        super().__init__(message, diagnostics)
