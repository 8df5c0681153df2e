"""Forward diffusion: closed-form noising, its reverse-time posterior, and
the discretized decoder likelihood for data on the 256-level grid.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import (
    DimensionMismatch,
    NonpositiveVariance,
    OffGridInput,
    StepOutOfRange,
)
from .schedule import NoiseSchedule

# data grid: 256 levels -1 + 2k/255, k = 0..255, half-bin width 1/255
GRID_LEVELS = 256
GRID_STEP = 2.0 / 255.0
HALF_BIN = 1.0 / 255.0


@dataclass(frozen=True)
class NoisedSample:
    """One closed-form draw x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""

    x0: np.ndarray
    t: int
    eps: np.ndarray
    xt: np.ndarray


def forward_sample(x0, t: int, eps, sched: NoiseSchedule) -> NoisedSample:
    """Jump straight to step t of the forward process using one normal draw."""
    if not (1 <= t <= sched.T):
        raise StepOutOfRange(f"step {t} outside 1..{sched.T}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionMismatch(f"shapes {x0.shape} vs {eps.shape}")
    ab = sched.abar(t)
    xt = math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    return NoisedSample(x0, t, eps, xt)


def posterior_coefficients(t: int, sched: NoiseSchedule) -> tuple[float, float]:
    """Weights (on x_t, on x_0) of the reverse-time posterior mean at step t >= 2."""
    if not (2 <= t <= sched.T):
        raise StepOutOfRange(f"posterior needs 2 <= t <= T, got {t}")
    a, ab_prev, ab = sched.a(t), sched.abar(t - 1), sched.abar(t)
    c_xt = math.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
    c_x0 = math.sqrt(ab_prev) * (1.0 - a) / (1.0 - ab)
    return c_xt, c_x0


def posterior_mean_var(xt, x0, t: int, sched: NoiseSchedule) -> tuple[np.ndarray, float]:
    """Mean and (scalar) variance of x_{t-1} given x_t and x_0, for t >= 2.

    Step 1 has no Gaussian posterior here; it is handled by the decoder
    likelihood instead.
    """
    c_xt, c_x0 = posterior_coefficients(t, sched)
    xt = np.asarray(xt, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if xt.shape != x0.shape:
        raise DimensionMismatch(f"shapes {xt.shape} vs {x0.shape}")
    return c_xt * xt + c_x0 * x0, sched.btilde(t)


def grid_index(x0) -> np.ndarray:
    """Indices k with x0 = -1 + 2k/255; raises when any coordinate is off-grid."""
    x0 = np.asarray(x0, dtype=np.float64)
    k = np.rint((x0 + 1.0) / GRID_STEP)
    if np.any(k < 0) or np.any(k > GRID_LEVELS - 1):
        raise OffGridInput("coordinate outside [-1, 1]")
    if np.max(np.abs(x0 - (-1.0 + k * GRID_STEP))) > 1e-12:
        raise OffGridInput("coordinate not on the 256-level grid")
    return k.astype(np.int64)


def _log_bin_prob(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """ln(Phi(hi) - Phi(lo)) elementwise, stable far into either tail.

    Entries of lo may be -inf and entries of hi +inf (boundary bins).
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    # mirror right-tail pairs into the left tail where log_ndtr is sharp
    flip = lo > 0.0
    lo_w = np.where(flip, -hi, lo)
    hi_w = np.where(flip, -lo, hi)

    tail = hi_w <= 0.0
    with np.errstate(divide="ignore"):
        la = log_ndtr(np.where(tail, lo_w, -np.inf))
        lb = log_ndtr(np.where(tail, hi_w, 0.0))
        # la <= lb by monotonicity; equality marks a bin with no mass left
        tail_val = lb + np.log1p(-np.exp(la - lb))
        direct = ndtr(hi_w) - ndtr(lo_w)
        out = np.where(tail, tail_val, np.log(np.maximum(direct, 1e-300)))
    return out


def decoder_loglik(x0, mean, variance: float) -> float:
    """Log-probability that a N(mean, variance*I) draw rounds back to x0's bins.

    Per coordinate the bin is (x - 1/255, x + 1/255), widened to a full
    half-line at the grid boundaries.
    """
    if variance <= 0.0:
        raise NonpositiveVariance(f"variance must be > 0, got {variance}")
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    if x0.shape != mean.shape:
        raise DimensionMismatch(f"shapes {x0.shape} vs {mean.shape}")
    k = grid_index(x0)
    sigma = math.sqrt(variance)
    upper = np.where(k == GRID_LEVELS - 1, np.inf, (x0 + HALF_BIN - mean) / sigma)
    lower = np.where(k == 0, -np.inf, (x0 - HALF_BIN - mean) / sigma)
    return float(np.sum(_log_bin_prob(lower, upper)))
