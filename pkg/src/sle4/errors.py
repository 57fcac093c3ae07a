"""Exception types shared by the simulation modules."""


class InvalidArgument(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """A numerical procedure did not converge; ``diagnostics`` holds the evidence."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ResourceError(RuntimeError):
    pass
