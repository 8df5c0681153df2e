"""diffusionlab: a desk-scale denoising diffusion laboratory.

Training, sampling, noise schedules, Gaussian closed forms, and evaluation
metrics over a minimal numpy/numba numeric core. See README for the CLI.
"""

__version__ = "0.1.0"

from .backend import BACKEND, HAS_NUMBA, USE_NUMBA

__all__ = ["BACKEND", "HAS_NUMBA", "USE_NUMBA", "__version__"]
