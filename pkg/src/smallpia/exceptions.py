class SmallPIAError(Exception):
    """Base for all smallpia errors."""


class ConfigurationError(SmallPIAError, ValueError):
    """A problem, oracle or experiment is configured inconsistently."""


class ConfigFileError(ConfigurationError):
    def __init__(self, message, path=None, line=1):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


class DimensionError(SmallPIAError, ValueError):
    pass


class CoefficientError(SmallPIAError, ValueError):
    def __init__(self, name, t, x, value):
        super().__init__(f"non-finite {name} coefficient {value!r} at (t={t!r}, x={x!r})")
        self.name = name
        self.t = t
        self.x = x


class UsageError(SmallPIAError, ValueError):
    pass


class NoPreFloorRegime(UsageError):
    def __init__(self, message="no pre-floor regime"):
        super().__init__(message)


class ConvergenceError(SmallPIAError, ArithmeticError):
    def __init__(self, message, residual, time_index=None):
        super().__init__(f"{message} (worst residual {residual:.3e})")
        self.residual = residual
        self.time_index = time_index


class IterationError(SmallPIAError):
    def __init__(self, algorithm, iteration, cause):
        super().__init__(f"{algorithm} iteration {iteration}: {cause}")
        self.algorithm = algorithm
        self.iteration = iteration
