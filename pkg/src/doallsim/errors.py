"""Exception types shared across the simulator."""


class DoAllError(Exception):
    """Base class for all simulator errors."""


class ParameterError(DoAllError):
    """A numeric parameter is outside its admissible range."""


class GraphError(DoAllError):
    """A graph could not be constructed or fails a structural requirement."""


class ShapeError(DoAllError):
    """An operation received a graph of the wrong shape (e.g. non-regular)."""


class ScheduleError(DoAllError):
    """An adversary schedule is inconsistent with the execution."""


class SpecError(DoAllError):
    """An adversary specification violates its defining constraints."""


class FormatError(DoAllError):
    """A file is malformed; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(DoAllError):
    """A run configuration failed validation; carries a machine-readable report."""

    def __init__(self, report: list[dict]):
        super().__init__("; ".join(r["error"] for r in report))
        self.report = report
