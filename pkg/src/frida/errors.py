"""Exception types raised across the package."""


class FridaError(Exception):
    """Base class for all package errors."""


class ShapeError(FridaError, ValueError):
    pass


class NumericError(FridaError, ArithmeticError):
    pass


class CapacityError(FridaError, ValueError):
    """A domain index does not fit in the configured code width."""


class ContractError(FridaError, ValueError):
    """A precondition on inputs or model state was violated."""


class ParseError(FridaError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(FridaError, ValueError):
    pass


class DivergenceError(FridaError, ArithmeticError):
    def __init__(self, message, epoch):
        self.epoch = epoch
        super().__init__(f"{message} (epoch {epoch})")


class ConfigError(FridaError, ValueError):
    pass
