class GridMismatchError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class NotNormalizedError(ValueError):
    pass


class ConfigError(ValueError):
    """Bad configuration; carries the file path, line and field when known."""

    def __init__(self, message, path=None, line=None, field=None):
        super().__init__(message)
        self.path = path
        self.line = line
        self.field = field

    def as_dict(self):
        return {"error": "config", "message": str(self), "path": self.path,
                "line": self.line, "field": self.field}


class NumericalInstabilityError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, module, step=None, trajectory=None, suggested_tau=None):
        super().__init__(message)
        self.module = module
        self.step = step
        self.trajectory = trajectory
        self.suggested_tau = suggested_tau

    def as_dict(self):
        return {"error": "numerical", "module": self.module, "message": str(self),
                "step": self.step, "trajectory": self.trajectory,
                "suggested_tau": self.suggested_tau}
