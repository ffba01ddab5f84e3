"""Block-coordinate geometric median descent (BGmD) with robust aggregation baselines."""
from ._backend import BACKEND
from .core import RunRecord, frobenius_norm_sq, grad_matrix, param_vector, rng_stream, row_mean

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "RunRecord",
    "frobenius_norm_sq",
    "grad_matrix",
    "param_vector",
    "rng_stream",
    "row_mean",
]
