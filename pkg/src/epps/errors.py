class EppsError(Exception):
    """Base class for package errors."""


class ConfigError(EppsError, ValueError):
    pass


class DatasetIntegrityError(EppsError):
    pass


class ShapeError(EppsError, ValueError):
    pass


class ValidationError(EppsError, ValueError):
    pass


class InsufficientBatchError(EppsError, ValueError):
    pass


class NonFiniteLossError(EppsError, RuntimeError):
    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite {component}: {value}")
        self.component = component
        self.value = value
