class FlexSampleError(Exception):
    pass


class ConfigError(FlexSampleError, ValueError):
    """Invalid configuration or shape mismatch."""


class InputError(FlexSampleError, ValueError):
    """Invalid data passed to an operation."""


class UsageError(FlexSampleError, RuntimeError):
    """An API was called in a way its contract forbids."""


class NumericalError(FlexSampleError, ArithmeticError):
    pass


class IngestionError(FlexSampleError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class StageError(FlexSampleError, RuntimeError):
    """Raised by the harness; ``stage`` names the pipeline step that failed."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
