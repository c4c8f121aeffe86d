"""Exception hierarchy shared across the package."""


class FedGLError(Exception):
    pass


class ParseError(FedGLError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class StructuralError(FedGLError):
    pass


class ConfigError(FedGLError):
    pass


class SplitError(FedGLError):
    pass


class DimensionError(FedGLError, ValueError):
    pass


class TrainingError(FedGLError):
    pass


class AggregationError(FedGLError):
    pass


class RoundError(FedGLError):
    pass


class CapacityError(FedGLError):
    pass


class SizeError(FedGLError, ValueError):
    pass


class AttackError(FedGLError):
    pass


class BoundError(FedGLError, ValueError):
    pass
