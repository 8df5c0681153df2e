"""Noise-intensity schedules and strided sampling plans.

A schedule stores, for T steps, the per-step retention factors alpha_t in
(0,1), their running products alpha_bar_0..alpha_bar_T (alpha_bar_0 = 1),
and the posterior variances beta_tilde_1..beta_tilde_T (beta_tilde_1 = 0).
Indexing helpers take the 1-based step index used everywhere else.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidK, OffsetOutOfRange, StepCountTooSmall

# largest admissible noise increment per step
_MAX_ONE_MINUS_ALPHA = 0.999

_LINEAR_ALPHA_FIRST = 1.0 - 1e-4
_LINEAR_ALPHA_LAST = 0.98

DEFAULT_COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable (alpha, alpha_bar, beta_tilde) family for T steps.

    alpha has length T (steps 1..T), alpha_bar length T+1 (steps 0..T with
    alpha_bar[0] = 1), beta_tilde length T (steps 1..T, beta_tilde[0] = 0
    holding the step-1 convention).
    """

    kind: str
    T: int
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    s: float | None = None

    def __post_init__(self):
        self.alpha.setflags(write=False)
        self.alpha_bar.setflags(write=False)
        self.beta_tilde.setflags(write=False)

    # 1-based step accessors
    def a(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def abar(self, t: int) -> float:
        return float(self.alpha_bar[t])

    def btilde(self, t: int) -> float:
        return float(self.beta_tilde[t - 1])


def _finish(kind: str, alpha: np.ndarray, s: float | None = None) -> NoiseSchedule:
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    # beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * (1 - alpha_t); zero at t=1
    beta_tilde = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * (1.0 - alpha)
    beta_tilde[0] = 0.0
    return NoiseSchedule(kind, len(alpha), alpha, alpha_bar, beta_tilde, s)


def linear_schedule(T: int) -> NoiseSchedule:
    """Retention factors interpolated linearly from 1-1e-4 down to 0.98."""
    if T < 2:
        raise StepCountTooSmall(f"linear schedule needs T >= 2, got {T}")
    t = np.arange(1, T + 1, dtype=np.float64)
    alpha = _LINEAR_ALPHA_FIRST - (t - 1.0) * (_LINEAR_ALPHA_FIRST - _LINEAR_ALPHA_LAST) / (T - 1.0)
    return _finish("linear", alpha)


def cosine_schedule(T: int, s: float = DEFAULT_COSINE_OFFSET) -> NoiseSchedule:
    """Squared-cosine retention profile with offset s, renormalized at t=0.

    Each 1 - alpha_t is clipped to at most 0.999 and alpha_bar is recomputed
    as the running product of the clipped factors, so the product invariant
    holds exactly.
    """
    if T < 2:
        raise StepCountTooSmall(f"cosine schedule needs T >= 2, got {T}")
    if not (0.0 < s < 1.0):
        raise OffsetOutOfRange(f"cosine offset must lie in (0, 1), got {s}")
    t = np.arange(0, T + 1, dtype=np.float64)
    profile = np.cos(((t / T + s) * math.pi) / ((1.0 + s) * 2.0)) ** 2
    raw_bar = profile / profile[0]
    alpha = raw_bar[1:] / raw_bar[:-1]
    alpha = np.maximum(alpha, 1.0 - _MAX_ONE_MINUS_ALPHA)
    return _finish("cosine", alpha, s)


@dataclass(frozen=True)
class StridePlan:
    """Strictly increasing sampling steps t_0 = 0 < t_1 < ... < t_K = T."""

    K: int
    steps: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.steps[0] != 0 or len(self.steps) != self.K + 1:
            raise InvalidK("stride plan endpoints inconsistent")


def stride_steps(T: int, K: int) -> StridePlan:
    """Evenly spaced sampling subsequence t_k = 1 + floor((k-1)(T-1)/(K-1)).

    Collisions (possible only through future formula changes; the floor
    formula is strictly increasing for 2 <= K <= T) advance to the next
    unused integer so the plan stays strictly monotone.
    """
    if not (2 <= K <= T):
        raise InvalidK(f"need 2 <= K <= T, got K={K}, T={T}")
    steps = [0]
    for k in range(1, K + 1):
        t = 1 + ((k - 1) * (T - 1)) // (K - 1)
        while t <= steps[-1]:
            t += 1
        steps.append(t)
    if steps[-1] != T:
        raise InvalidK(f"stride plan ends at {steps[-1]}, expected {T}")
    return StridePlan(K, tuple(steps))
