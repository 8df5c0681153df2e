"""Losses, the SGD loop, conditioning dropout, and checkpoint persistence.

The hybrid loss realizes learned variances: the per-coordinate variance
interpolates log-linearly between the step variance 1 - alpha_t and the
posterior variance beta_tilde_t, driven by the tanh head v2. Its mean path
runs through a frozen parameter copy so no gradient flows into the mean.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .denoiser import (
    HEAD_DUAL,
    ClassConditioning,
    DenoiserArch,
    DenoiserModel,
    TokenConditioning,
    denoise,
)
from .errors import (
    BadMagic,
    ConfigError,
    LengthMismatch,
    NotDualHead,
    StepOutOfRange,
    TruncatedFile,
)
from .forward import GRID_LEVELS, HALF_BIN, forward_sample, grid_index, posterior_mean_var
from .numerics import ADTape, RngStream, grad, ops
from .schedule import NoiseSchedule, cosine_schedule, linear_schedule

VARIANTS = ("ddpm", "improved", "cfg")

# log-probabilities in the optimization objective are clamped here; the
# measurement-grade decoder likelihood in forward.py is exact instead
_DECODER_PROB_FLOOR = 1e-12

# stream tags for the independent draw sequences of one training run
_TAG_STEP = 1
_TAG_NOISE = 2
_TAG_MASK = 3


@dataclass(frozen=True)
class TrainConfig:
    gamma: float
    J: int
    N: int
    lam: float = 0.001
    p_uncond: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ConfigError(f"learning rate must be > 0, got {self.gamma}")
        if self.J < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.J}")
        if self.N < 0:
            raise ConfigError(f"step count must be >= 0, got {self.N}")
        if self.lam < 0.0:
            raise ConfigError(f"hybrid weight must be >= 0, got {self.lam}")
        if not (0.0 <= self.p_uncond <= 1.0):
            raise ConfigError(f"dropout probability must be in [0,1], got {self.p_uncond}")


def _batched(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr.reshape(1, -1), True
    return arr, False


def simple_loss(model: DenoiserModel, x0, eps, t: int, sched: NoiseSchedule,
                cond=None, params=None):
    """Mean over the batch of ||eps - V(sqrt(abar_t) x0 + sqrt(1-abar_t) eps, t)||^2.

    Single samples (1-D inputs) give the plain squared norm. Differentiable
    when params is a tape Tensor.
    """
    x0b, _ = _batched(x0)
    epsb, _ = _batched(eps)
    xt = forward_sample(x0b, t, epsb, sched).xt
    eps_hat, _ = denoise(model, xt, t, cond, params=params)
    r = ops.sub(epsb, eps_hat)
    out = ops.mul(ops.total(ops.mul(r, r)), 1.0 / x0b.shape[0])
    return out if hasattr(out, "value") else float(out)


def log_variance_interpolation(v2, t: int, sched: NoiseSchedule):
    """ln Sigma = v2 ln(1-alpha_t) + (1-v2) ln beta_tilde_t, elementwise.

    beta_tilde_1 is zero, so its log is replaced by ln beta_tilde_2: the
    step-1 variance keeps the same interpolation range as step 2 instead of
    collapsing, and sampling still uses exactly zero noise at the last step.
    """
    if not (1 <= t <= sched.T):
        raise StepOutOfRange(f"step {t} outside 1..{sched.T}")
    log_hi = math.log(1.0 - sched.a(t))
    bt = sched.btilde(t) if t >= 2 else sched.btilde(2)
    log_lo = math.log(bt)
    return ops.add(ops.mul(v2, log_hi), ops.mul(ops.sub(1.0, v2), log_lo))


def reverse_mean_from_eps(xt: np.ndarray, eps_hat: np.ndarray, t: int,
                          sched: NoiseSchedule) -> np.ndarray:
    """(xt - (1-alpha_t)/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)."""
    a, ab = sched.a(t), sched.abar(t)
    return (xt - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)


def _normal_cdf(z):
    return ops.mul(ops.add(ops.erf(ops.mul(z, 1.0 / math.sqrt(2.0))), 1.0), 0.5)


def _decoder_term(x0b: np.ndarray, mean: np.ndarray, log_sigma2):
    """-(1/J) sum of clamped per-bin log-probabilities, gradient via sigma only."""
    k = grid_index(x0b)
    sigma = ops.exp(ops.mul(log_sigma2, 0.5))
    interior_hi = (k < GRID_LEVELS - 1).astype(np.float64)
    interior_lo = (k > 0).astype(np.float64)
    # boundary bins extend to the half-line: their CDF factor is the constant 1 or 0
    cdf_hi = _normal_cdf(ops.div(x0b + HALF_BIN - mean, sigma))
    cdf_lo = _normal_cdf(ops.div(x0b - HALF_BIN - mean, sigma))
    cdf_hi = ops.add(ops.mul(cdf_hi, interior_hi), 1.0 - interior_hi)
    cdf_lo = ops.mul(cdf_lo, interior_lo)
    log_probs = ops.ln(ops.clip_min(ops.sub(cdf_hi, cdf_lo), _DECODER_PROB_FLOOR))
    return ops.mul(ops.total(log_probs), -1.0 / x0b.shape[0])


def hybrid_loss(model: DenoiserModel, frozen_params: np.ndarray, x0, eps, t: int,
                sched: NoiseSchedule, lam: float = 0.001, cond=None, params=None):
    """||eps - v1||^2 plus lam times the variational term with learned variance.

    For t > 1 the variational term is the Gaussian KL between the forward
    posterior and the reverse step whose mean comes from the frozen copy
    (stopping the mean gradient) and whose diagonal variance comes from the
    live v2 head. For t = 1 it is the negative decoder log-likelihood with
    the same mean/variance split; x0 must sit on the data grid there.
    """
    if model.arch.head != HEAD_DUAL:
        raise NotDualHead("hybrid loss needs a noise+variance head")
    x0b, single = _batched(x0)
    epsb, _ = _batched(eps)
    J = x0b.shape[0]
    xt = forward_sample(x0b, t, epsb, sched).xt

    v1, v2 = denoise(model, xt, t, cond, params=params)
    r = ops.sub(epsb, v1)
    loss = ops.mul(ops.total(ops.mul(r, r)), 1.0 / J)
    if lam == 0.0:
        return loss if hasattr(loss, "value") else float(loss)

    frozen_v1, _ = denoise(model, xt, t, cond, params=frozen_params)
    mean_p = reverse_mean_from_eps(xt, np.asarray(frozen_v1), t, sched)
    log_sigma2 = log_variance_interpolation(v2, t, sched)

    if t >= 2:
        mu_q, beta_t = posterior_mean_var(xt, x0b, t, sched)
        gap2 = (mu_q - mean_p) ** 2
        sigma2 = ops.exp(log_sigma2)
        inv = ops.div(1.0, sigma2)
        # 0.5 [ln sigma^2 - ln beta - 1 + beta/sigma^2 + gap^2/sigma^2] per coordinate
        kl = ops.add(
            ops.add(log_sigma2, -math.log(beta_t) - 1.0),
            ops.mul(inv, gap2 + beta_t),
        )
        term = ops.mul(ops.total(kl), 0.5 / J)
    else:
        term = _decoder_term(x0b, mean_p, log_sigma2)
    out = ops.add(loss, ops.mul(term, lam))
    return out if hasattr(out, "value") else float(out)


def cfg_mask(c: np.ndarray, bern: int) -> np.ndarray:
    """The conditioning actually trained on: c when bern is 1, else zeros."""
    c = np.asarray(c, dtype=np.float64)
    return c if bern == 1 else np.zeros_like(c)


def sgd_step(params: np.ndarray, grads, gamma: float) -> np.ndarray:
    """theta - gamma * (batch-mean gradient); grads is one vector or a list."""
    params = np.asarray(params, dtype=np.float64)
    if isinstance(grads, (list, tuple)):
        if not grads:
            raise LengthMismatch("empty gradient list")
        for g in grads:
            if np.asarray(g).shape != params.shape:
                raise LengthMismatch(f"gradient shape {np.asarray(g).shape} vs {params.shape}")
        g = np.mean(np.stack([np.asarray(g, dtype=np.float64) for g in grads]), axis=0)
    else:
        g = np.asarray(grads, dtype=np.float64)
        if g.shape != params.shape:
            raise LengthMismatch(f"gradient shape {g.shape} vs {params.shape}")
    return params - gamma * g


@dataclass
class TrainResult:
    model: DenoiserModel
    losses: list[float]
    rng_counters: dict[str, int] = field(default_factory=dict)


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, num_classes), dtype=np.float64)
    out[np.arange(labels.size), labels.astype(np.int64)] = 1.0
    return out


def train(model: DenoiserModel, source, cfg: TrainConfig, sched: NoiseSchedule,
          variant: str = "ddpm") -> TrainResult:
    """Run N SGD steps; each draws one shared t, J noise vectors, J data points.

    variant ddpm trains the noise head with simple_loss, improved trains a
    dual head with hybrid_loss, cfg trains a class-conditional model with
    conditioning dropped (zeroed) with probability p_uncond per sample.
    Deterministic: identical (model, source state, cfg) give identical
    parameter trajectories.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if variant == "improved" and model.arch.head != HEAD_DUAL:
        raise NotDualHead("variant improved needs a noise+variance head")
    if variant == "cfg" and not isinstance(model.arch.conditioning, ClassConditioning):
        raise ConfigError("variant cfg needs a class-conditional model")

    root = RngStream(cfg.seed)
    t_stream = root.split(_TAG_STEP)
    noise_stream = root.split(_TAG_NOISE)
    mask_stream = root.split(_TAG_MASK)

    params = model.params.copy()
    d = model.arch.d
    losses: list[float] = []
    for _ in range(cfg.N):
        t = int(t_stream.integers(1, low=1, high=sched.T + 1)[0])
        x0, labels = source.take(cfg.J)
        x0 = np.asarray(x0, dtype=np.float64).reshape(cfg.J, d)
        eps = noise_stream.normals(cfg.J * d).reshape(cfg.J, d)

        cond = None
        if variant == "cfg":
            if labels is None:
                raise ConfigError("variant cfg needs labeled data")
            onehot = _one_hot(np.asarray(labels), model.arch.conditioning.num_classes)
            keep = mask_stream.bernoulli(cfg.J, 1.0 - cfg.p_uncond)
            cond = np.stack([cfg_mask(onehot[j], int(keep[j])) for j in range(cfg.J)])

        tape = ADTape()
        leaf = tape.tensor(params)
        if variant == "improved":
            loss = hybrid_loss(model, params, x0, eps, t, sched,
                               lam=cfg.lam, cond=cond, params=leaf)
        else:
            loss = simple_loss(model, x0, eps, t, sched, cond=cond, params=leaf)
        g = grad(loss, [leaf])[0]
        params = sgd_step(params, g, cfg.gamma)
        losses.append(float(loss.value))

    counters = {"t": t_stream.counter, "eps": noise_stream.counter,
                "mask": mask_stream.counter}
    return TrainResult(model.with_params(params), losses, counters)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"DDPMCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    version: int
    schedule: dict
    arch: dict
    step: int
    rng: dict
    params32: np.ndarray


def _arch_to_meta(arch: DenoiserArch) -> dict:
    cond = arch.conditioning
    if cond is None:
        cond_meta = None
    elif isinstance(cond, ClassConditioning):
        cond_meta = {"kind": "class", "num_classes": cond.num_classes}
    else:
        cond_meta = {"kind": "tokens", "length": cond.length, "width": cond.width,
                     "heads": cond.heads, "d_head": cond.d_head}
    return {"d": arch.d, "hidden": list(arch.hidden), "d_emb": arch.d_emb,
            "head": arch.head, "conditioning": cond_meta}


def arch_from_meta(meta: dict) -> DenoiserArch:
    cond_meta = meta.get("conditioning")
    if cond_meta is None:
        cond = None
    elif cond_meta["kind"] == "class":
        cond = ClassConditioning(int(cond_meta["num_classes"]))
    else:
        cond = TokenConditioning(int(cond_meta["length"]), int(cond_meta["width"]),
                                 int(cond_meta["heads"]), int(cond_meta["d_head"]))
    return DenoiserArch(int(meta["d"]), tuple(int(w) for w in meta["hidden"]),
                        int(meta["d_emb"]), meta["head"], cond)


def schedule_to_meta(sched: NoiseSchedule) -> dict:
    return {"kind": sched.kind, "T": sched.T, "s": sched.s}


def schedule_from_meta(meta: dict) -> NoiseSchedule:
    if meta["kind"] == "linear":
        return linear_schedule(int(meta["T"]))
    if meta["kind"] == "cosine":
        return cosine_schedule(int(meta["T"]), float(meta["s"]))
    raise ConfigError(f"unknown schedule kind {meta['kind']!r}")


def save_checkpoint(path: str, model: DenoiserModel, sched: NoiseSchedule,
                    step: int, rng_counters: dict | None = None) -> None:
    """Magic, version, length-prefixed JSON metadata, float32 parameter block."""
    meta = {
        "arch": _arch_to_meta(model.arch),
        "param_count": model.param_count,
        "rng": rng_counters or {},
        "schedule": schedule_to_meta(sched),
        "step": int(step),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(model.params.astype("<f4").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8:
        raise TruncatedFile(f"checkpoint {path} too short for its header")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagic(f"checkpoint {path} has wrong magic bytes")
    pos = len(CHECKPOINT_MAGIC)
    version = struct.unpack_from("<I", raw, pos)[0]
    meta_len = struct.unpack_from("<I", raw, pos + 4)[0]
    pos += 8
    if len(raw) < pos + meta_len:
        raise TruncatedFile(f"checkpoint {path} metadata truncated")
    meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    if meta.get("kind", "denoiser") != "denoiser":
        raise ConfigError(f"{path} holds a {meta['kind']} model, not a denoiser")
    count = int(meta["param_count"])
    if len(raw) < pos + 4 * count:
        raise TruncatedFile(f"checkpoint {path} parameter block truncated")
    params32 = np.frombuffer(raw[pos : pos + 4 * count], dtype="<f4").copy()
    return Checkpoint(version, meta["schedule"], meta["arch"], int(meta["step"]),
                      meta["rng"], params32)


def model_from_checkpoint(ck: Checkpoint) -> DenoiserModel:
    arch = arch_from_meta(ck.arch)
    return DenoiserModel(arch, ck.params32.astype(np.float64))
