"""thinfb: a numerical laboratory for the thin obstacle problem."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
