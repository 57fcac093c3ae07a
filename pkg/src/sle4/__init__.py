"""Natural parametrisation of SLE_4 from the Gaussian free field: simulation and checks."""
from .errors import InvalidArgument, NumericalFailure, ResourceError

__all__ = ["InvalidArgument", "NumericalFailure", "ResourceError"]
