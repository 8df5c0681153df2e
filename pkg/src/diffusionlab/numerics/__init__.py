"""Core numerics: tensors with reverse-mode AD, SPD linear algebra, RNG."""

from . import autodiff as ops
from .autodiff import ADTape, Tensor, grad
from .linalg import jacobi_eigh, spd_sqrt
from .rng import RngStream, sample_standard_normal

__all__ = [
    "ADTape",
    "RngStream",
    "Tensor",
    "grad",
    "jacobi_eigh",
    "ops",
    "sample_standard_normal",
    "spd_sqrt",
]
