"""Exception hierarchy shared across the package."""


class ZiraError(Exception):
    pass


class DimensionError(ZiraError, ValueError):
    pass


class DomainError(ZiraError, ValueError):
    pass


class DegenerateInputError(ZiraError, ValueError):
    pass


class GraphError(ZiraError, RuntimeError):
    pass


class NumericError(ZiraError, ArithmeticError):
    pass


class OracleError(ZiraError, RuntimeError):
    pass


class StateError(ZiraError, RuntimeError):
    pass


class PretrainConvergenceError(ZiraError, RuntimeError):
    pass


class TrainingError(ZiraError, RuntimeError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class CheckpointError(ZiraError, ValueError):
    pass


class ConfigError(ZiraError, ValueError):
    pass
