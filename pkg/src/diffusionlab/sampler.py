"""Backward-process generators: ancestral, strided learned-variance, the
eta-family of partially deterministic samplers, and guided extrapolation.

Every chain in a batch owns a private stream derived from (seed, chain
index), so per-chain draws never depend on how many chains run together.
All four samplers share the convention that the final step adds no noise.
"""

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import HEAD_DUAL, HEAD_NOISE, ClassConditioning, DenoiserModel, denoise
from .errors import (
    ConditioningMismatch,
    ConfigError,
    HeadMismatch,
    InvalidPlan,
    OutOfRange,
    SigmaConstraintViolated,
)
from .numerics import RngStream
from .schedule import NoiseSchedule, StridePlan

SAMPLER_VARIANTS = ("ddpm", "improved", "ddim", "guided")


@dataclass(frozen=True)
class SampleRequest:
    count: int
    seed: int
    variant: str = "ddpm"
    K: int | None = None
    eta: float = 0.0
    w: float = 0.0
    record_trajectory: bool = False

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"sample count must be >= 1, got {self.count}")
        if self.variant not in SAMPLER_VARIANTS:
            raise ConfigError(f"unknown sampler variant {self.variant!r}")


@dataclass(frozen=True)
class SampleResult:
    samples: np.ndarray
    trajectory: np.ndarray | None = None


def _chain_noise(seed: int, count: int, per_chain: int) -> np.ndarray:
    """(count, per_chain) normal draws, chain i from split(i) of the seed."""
    root = RngStream(seed)
    out = np.empty((count, per_chain), dtype=np.float64)
    for i in range(count):
        out[i] = root.split(i).normals(per_chain)
    return out


def _run_chain(step_fn, d: int, req: SampleRequest, times, noisy_flags):
    """Walk the batch down the listed times from a standard normal start.

    step_fn(x, time) -> (mean, sigma); sigma (scalar or per-coordinate) is
    applied only on steps flagged noisy, keeping every chain's draw order
    fixed at d for the start plus d per noisy step.
    """
    draws = _chain_noise(req.seed, req.count, d * (1 + sum(noisy_flags)))
    x = draws[:, :d].copy()
    frames = [x.copy()] if req.record_trajectory else None
    col = d
    for time, noisy in zip(times, noisy_flags):
        mean, sigma = step_fn(x, time)
        if noisy:
            z = draws[:, col : col + d]
            col += d
            x = mean + sigma * z
        else:
            x = mean
        if frames is not None:
            frames.append(x.copy())
    traj = np.stack(frames) if frames is not None else None
    return SampleResult(x, traj)


def _validate_plan(plan: StridePlan, sched: NoiseSchedule):
    steps = plan.steps
    if len(steps) != plan.K + 1 or steps[0] != 0 or steps[-1] != sched.T:
        raise InvalidPlan(f"plan endpoints {steps[0]}..{steps[-1]} do not span 0..{sched.T}")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InvalidPlan("plan steps must increase strictly")


def ddpm_sample(model: DenoiserModel, sched: NoiseSchedule, req: SampleRequest,
                cond=None, eps_fn=None) -> SampleResult:
    """Ancestral chain from pure noise down to a sample.

    X_{t-1} = (X_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t)
              + sqrt(beta_tilde_t) Z, noiseless at t = 1.
    eps_fn(X, t) overrides the network, for analytic predictors.
    """
    if eps_fn is None:
        if model.arch.head != HEAD_NOISE:
            raise HeadMismatch("ancestral sampling needs a noise-only head")
        eps_fn = lambda x, t: denoise(model, x, t, cond)[0]

    def step(x, t):
        a, ab = sched.a(t), sched.abar(t)
        mean = (x - (1.0 - a) / math.sqrt(1.0 - ab) * eps_fn(x, t)) / math.sqrt(a)
        return mean, (math.sqrt(sched.btilde(t)) if t >= 2 else None)

    times = list(range(sched.T, 0, -1))
    return _run_chain(step, model.arch.d, req, times, [t >= 2 for t in times])


def improved_sample(model: DenoiserModel, sched: NoiseSchedule, plan: StridePlan,
                    req: SampleRequest) -> SampleResult:
    """Strided chain with the learned per-coordinate variance.

    Each stride k uses the effective step ratio a'_k = abar(t_k)/abar(t_{k-1})
    in the ancestral update, with noise scale exp interpolated between
    ln(1 - a'_k) and ln beta_tilde'_k by the v2 head. The last stride is
    noiseless, matching the ancestral convention.
    """
    if model.arch.head != HEAD_DUAL:
        raise HeadMismatch("strided learned-variance sampling needs a dual head")
    _validate_plan(plan, sched)
    steps = plan.steps

    def step(x, k):
        t_k, t_prev = steps[k], steps[k - 1]
        ab_k, ab_prev = sched.abar(t_k), sched.abar(t_prev)
        a_eff = ab_k / ab_prev
        v1, v2 = denoise(model, x, t_k)
        mean = (x - (1.0 - a_eff) / math.sqrt(1.0 - ab_k) * v1) / math.sqrt(a_eff)
        sigma = None
        if k >= 2:
            beta_eff = (1.0 - ab_prev) / (1.0 - ab_k) * (1.0 - a_eff)
            logv = v2 * math.log(1.0 - a_eff) + (1.0 - v2) * math.log(beta_eff)
            sigma = np.exp(0.5 * logv)
        return mean, sigma

    ks = list(range(plan.K, 0, -1))
    return _run_chain(step, model.arch.d, req, ks, [k >= 2 for k in ks])


def ddim_sigma(sched: NoiseSchedule, t_k: int, t_prev: int, eta: float) -> float:
    """eta * sqrt((1-a_{t_k}) (1-abar_{t_prev}) / (1-abar_{t_k})), checked
    against the accumulated-noise budget sigma^2 <= 1 - abar_{t_prev}."""
    if not (0.0 <= eta <= 1.0):
        raise SigmaConstraintViolated(f"eta {eta} outside [0,1] breaks the noise budget")
    ab_k, ab_prev = sched.abar(t_k), sched.abar(t_prev)
    sigma2 = eta**2 * (1.0 - sched.a(t_k)) * (1.0 - ab_prev) / (1.0 - ab_k)
    if sigma2 > (1.0 - ab_prev) + 1e-15:
        raise SigmaConstraintViolated(
            f"sigma^2 {sigma2} exceeds 1 - abar_(t_prev) = {1.0 - ab_prev}")
    return math.sqrt(sigma2)


def ddim_sample(model: DenoiserModel, sched: NoiseSchedule, plan: StridePlan,
                eta: float, req: SampleRequest, cond=None, eps_fn=None) -> SampleResult:
    """Noise-budgeted strided chain; eta = 0 is fully deterministic.

    X_{k-1} = sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev - sigma^2) eps_hat
              + sigma Z with x0_hat = (X_k - sqrt(1-abar_k) eps_hat)/sqrt(abar_k).
    """
    _validate_plan(plan, sched)
    if eps_fn is None:
        eps_fn = lambda x, t: denoise(model, x, t, cond)[0]
    steps = plan.steps
    sigmas = {k: ddim_sigma(sched, steps[k], steps[k - 1], eta)
              for k in range(plan.K, 0, -1)}

    def step(x, k):
        t_k, t_prev = steps[k], steps[k - 1]
        ab_k, ab_prev = sched.abar(t_k), sched.abar(t_prev)
        eps_hat = eps_fn(x, t_k)
        x0_hat = (x - math.sqrt(1.0 - ab_k) * eps_hat) / math.sqrt(ab_k)
        drift = math.sqrt(max(1.0 - ab_prev - sigmas[k] ** 2, 0.0))
        return math.sqrt(ab_prev) * x0_hat + drift * eps_hat, sigmas[k]

    ks = list(range(plan.K, 0, -1))
    return _run_chain(step, model.arch.d, req, ks, [sigmas[k] > 0.0 for k in ks])


def guided_sample(model: DenoiserModel, sched: NoiseSchedule, w: float, c,
                  req: SampleRequest) -> SampleResult:
    """Ancestral chain driven by the class-extrapolated noise estimate
    (1+w) V(x, c, t) - w V(x, 0, t); c may be one-hot or all zeros."""
    if not isinstance(model.arch.conditioning, ClassConditioning):
        raise ConditioningMismatch("guided sampling needs a class-conditional model")
    if model.arch.head != HEAD_NOISE:
        raise HeadMismatch("guided sampling needs a noise-only head")
    if w < 0.0:
        raise OutOfRange(f"guidance weight must be >= 0, got {w}")
    c = np.asarray(c, dtype=np.float64)
    C = model.arch.conditioning.num_classes
    if c.shape != (C,):
        raise ConditioningMismatch(f"class vector shape {c.shape}, expected ({C},)")
    if not (np.all((c == 0.0) | (c == 1.0)) and c.sum() in (0.0, 1.0)):
        raise ConditioningMismatch("class vector must be one-hot or all zeros")
    zero = np.zeros(C)

    def guided_eps(x, t):
        vc = denoise(model, x, t, c)[0]
        vu = denoise(model, x, t, zero)[0]
        return (1.0 + w) * vc - w * vu

    return ddpm_sample(model, sched, req, eps_fn=guided_eps)
