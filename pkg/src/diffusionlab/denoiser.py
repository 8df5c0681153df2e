"""The noise-prediction network.

A residual MLP over flat parameter vectors. Each hidden block adds a
learned affine image of the sinusoidal time embedding, optionally modulates
activations with class-driven adaptive group normalization, and optionally
(once, after the last block) attends over a conditioning token matrix.
Heads: plain noise prediction, or a doubled output whose second half is a
tanh-squashed interpolation coefficient for learned variances.

All model math goes through the polymorphic ops in numerics.autodiff, so
the same code path runs on plain arrays (sampling) and on tape Tensors
(training gradients).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConditioningMismatch,
    DegenerateEmbedding,
    ShapeMismatch,
    StepOutOfRange,
)
from .numerics import RngStream, ops

HEAD_NOISE = "noise-only"
HEAD_DUAL = "noise+variance"


@dataclass(frozen=True)
class TimeEmbeddingSpec:
    """Sinusoidal embedding width; d_emb = 2c with c >= 2."""

    d_emb: int

    def __post_init__(self):
        if self.d_emb < 4 or self.d_emb % 2 != 0:
            raise DegenerateEmbedding(f"embedding dim must be even and >= 4, got {self.d_emb}")

    @property
    def c(self) -> int:
        return self.d_emb // 2


def time_embedding(t: int, spec: TimeEmbeddingSpec) -> np.ndarray:
    """c sines then c cosines of t / 10000^(i/(c-1)), i = 1..c."""
    if t < 0:
        raise StepOutOfRange(f"step must be >= 0, got {t}")
    c = spec.c
    i = np.arange(1, c + 1, dtype=np.float64)
    angles = t * np.power(10000.0, -i / (c - 1))
    return np.concatenate([np.sin(angles), np.cos(angles)])


@dataclass(frozen=True)
class ClassConditioning:
    num_classes: int


@dataclass(frozen=True)
class TokenConditioning:
    length: int
    width: int
    heads: int
    d_head: int


@dataclass(frozen=True)
class DenoiserArch:
    """Shape of the network; parameters live separately as one flat vector."""

    d: int
    hidden: tuple[int, ...]
    d_emb: int
    head: str = HEAD_NOISE
    conditioning: ClassConditioning | TokenConditioning | None = None

    def __post_init__(self):
        if self.head not in (HEAD_NOISE, HEAD_DUAL):
            raise ShapeMismatch(f"unknown head mode {self.head!r}")
        if not self.hidden:
            raise ShapeMismatch("at least one hidden block required")
        TimeEmbeddingSpec(self.d_emb)  # validates

    @property
    def out_dim(self) -> int:
        return 2 * self.d if self.head == HEAD_DUAL else self.d

    @property
    def emb_spec(self) -> TimeEmbeddingSpec:
        return TimeEmbeddingSpec(self.d_emb)


def build_layout(arch: DenoiserArch) -> tuple[dict[str, tuple[int, tuple[int, ...]]], int]:
    """Name -> (offset, shape) table tiling the flat parameter vector.

    Returns the table and the total length. Entries carry an implicit
    fan-in (their initialization scale); see init_params.
    """
    entries: list[tuple[str, tuple[int, ...]]] = []
    entries.append(("input.w", (arch.d, arch.hidden[0])))
    entries.append(("input.b", (arch.hidden[0],)))
    prev = arch.hidden[0]
    for k, w in enumerate(arch.hidden):
        if k > 0 and prev != w:
            entries.append((f"block{k}.proj.w", (prev, w)))
            entries.append((f"block{k}.proj.b", (w,)))
        entries.append((f"block{k}.time.w", (arch.d_emb, w)))
        entries.append((f"block{k}.time.b", (w,)))
        if isinstance(arch.conditioning, ClassConditioning):
            entries.append((f"block{k}.cls.w", (arch.conditioning.num_classes, 2 * w)))
            entries.append((f"block{k}.cls.b", (2 * w,)))
        entries.append((f"block{k}.core.w1", (w, w)))
        entries.append((f"block{k}.core.b1", (w,)))
        entries.append((f"block{k}.core.w2", (w, w)))
        entries.append((f"block{k}.core.b2", (w,)))
        prev = w
    if isinstance(arch.conditioning, TokenConditioning):
        tc = arch.conditioning
        for i in range(tc.heads):
            entries.append((f"attn.q{i}", (prev, tc.d_head)))
            entries.append((f"attn.k{i}", (tc.width, tc.d_head)))
            entries.append((f"attn.v{i}", (tc.width, tc.d_head)))
        entries.append(("attn.proj", (tc.heads * tc.d_head, prev)))
    entries.append(("head.w", (prev, arch.out_dim)))
    entries.append(("head.b", (arch.out_dim,)))

    layout: dict[str, tuple[int, tuple[int, ...]]] = {}
    offset = 0
    for name, shape in entries:
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout, offset


def _fan_in(name: str, shape: tuple[int, ...], layout) -> int:
    if len(shape) == 2:
        return shape[0]
    # biases inherit the fan-in of their sibling weight matrix
    sibling = name[:-2] + ".w" if name.endswith(".b") else name
    if name.endswith(".b1") or name.endswith(".b2"):
        sibling = name[:-3] + ".w" + name[-1]
    return layout[sibling][1][0]


def init_params(arch: DenoiserArch, seed: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per entry, fixed seed."""
    layout, total = build_layout(arch)
    stream = RngStream(seed)
    params = np.empty(total, dtype=np.float64)
    for name, (offset, shape) in layout.items():
        bound = 1.0 / math.sqrt(_fan_in(name, shape, layout))
        u = stream.uniforms(int(np.prod(shape)))
        params[offset : offset + u.size] = bound * (2.0 * u - 1.0)
    return params


@dataclass(frozen=True)
class DenoiserModel:
    arch: DenoiserArch
    params: np.ndarray

    def __post_init__(self):
        layout, total = build_layout(self.arch)
        if self.params.shape != (total,):
            raise ShapeMismatch(f"params shape {self.params.shape}, layout needs ({total},)")
        object.__setattr__(self, "_layout", layout)

    @staticmethod
    def initialized(arch: DenoiserArch, seed: int) -> "DenoiserModel":
        return DenoiserModel(arch, init_params(arch, seed))

    @property
    def layout(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        return self._layout

    @property
    def param_count(self) -> int:
        return self.params.size

    def with_params(self, params: np.ndarray) -> "DenoiserModel":
        return DenoiserModel(self.arch, params)


def _view(params, layout, name: str):
    offset, shape = layout[name]
    size = int(np.prod(shape))
    if isinstance(params, np.ndarray):
        return params[offset : offset + size].reshape(shape)
    return ops.reshape(ops.slice_axis(params, 0, offset, offset + size), shape)


def _const_group_matrices(d_feat: int, D: int, groups: int):
    # averaging matrix (groups x d_feat), its indicator transpose, and the
    # (d_feat x D) tiling matrix for modulation signals; coordinate i + D*j
    # has channel i
    ch = np.arange(d_feat) % D
    grp = ch // (D // groups)
    avg = np.zeros((groups, d_feat))
    avg[grp, np.arange(d_feat)] = 1.0
    counts = avg.sum(axis=1, keepdims=True)
    tile = np.zeros((d_feat, D))
    tile[np.arange(d_feat), ch] = 1.0
    return avg / counts, (avg > 0).astype(np.float64), tile


def adagn(x, y1, y2, beta: float = 0.0, gamma: float = 1.0, eps: float = 1e-5, groups: int = 1):
    """Group-normalize x, apply the gamma/beta affine, then scale by y1 and
    shift by y2, each tiled with period D = len(y1) over the coordinates.

    x is one feature vector or a batch of rows; y1/y2 are one modulation
    vector or matching batch rows.
    """
    xv = x.value if hasattr(x, "value") else np.asarray(x, dtype=np.float64)
    y1v = y1.value if hasattr(y1, "value") else np.asarray(y1, dtype=np.float64)
    y2v = y2.value if hasattr(y2, "value") else np.asarray(y2, dtype=np.float64)
    if xv.ndim not in (1, 2) or y1v.ndim not in (1, 2):
        raise ShapeMismatch("adagn expects vectors or row batches")
    if y1v.shape != y2v.shape:
        raise ShapeMismatch(f"modulation shapes differ: {y1v.shape} vs {y2v.shape}")
    d_feat = xv.shape[-1]
    D = y1v.shape[-1]
    if D == 0 or d_feat % D != 0:
        raise ShapeMismatch(f"modulation width {D} must divide feature width {d_feat}")
    if groups < 1 or D % groups != 0:
        raise ShapeMismatch(f"groups {groups} must divide channel count {D}")
    if y1v.ndim == 2 and xv.ndim == 2 and y1v.shape[0] not in (1, xv.shape[0]):
        raise ShapeMismatch(f"batch sizes differ: {xv.shape[0]} vs {y1v.shape[0]}")

    single = xv.ndim == 1
    x2 = ops.reshape(x, (1, d_feat)) if single else x
    y1r = ops.reshape(y1, (1, D)) if y1v.ndim == 1 else y1
    y2r = ops.reshape(y2, (1, D)) if y2v.ndim == 1 else y2

    avg, ind, tile = _const_group_matrices(d_feat, D, groups)
    m = ops.matmul(ops.matmul(x2, avg.T), ind)
    centered = ops.sub(x2, m)
    v = ops.matmul(ops.matmul(ops.mul(centered, centered), avg.T), ind)
    normed = ops.div(centered, ops.sqrt(ops.add(v, eps)))
    gn = ops.add(ops.mul(normed, gamma), beta)
    out = ops.add(ops.mul(ops.matmul(y1r, tile.T), gn), ops.matmul(y2r, tile.T))
    return ops.reshape(out, (d_feat,)) if single else out


def cross_attention(x, y, wq, wk, wv, proj):
    """Multi-head attention of query rows x over key/value token rows y.

    wq/wk/wv are per-head weight matrices (lists of equal length); each
    head computes softmax(x Wq (y Wk)^T / sqrt(d_head)) (y Wv), the head
    outputs are concatenated along columns and mapped back through proj.
    """
    xv = x.value if hasattr(x, "value") else np.asarray(x, dtype=np.float64)
    yv = y.value if hasattr(y, "value") else np.asarray(y, dtype=np.float64)
    if xv.ndim != 2 or yv.ndim != 2:
        raise ShapeMismatch("attention operands must be matrices")
    if not (len(wq) == len(wk) == len(wv)) or not wq:
        raise ShapeMismatch("per-head weight lists must be equal-length and nonempty")

    def shape_of(w):
        return w.shape if hasattr(w, "shape") else np.asarray(w).shape

    e, c = xv.shape[1], yv.shape[1]
    d_head = shape_of(wq[0])[1]
    heads = []
    for i in range(len(wq)):
        if shape_of(wq[i]) != (e, d_head):
            raise ShapeMismatch(f"query weights head {i}: {shape_of(wq[i])} vs ({e}, {d_head})")
        if shape_of(wk[i]) != (c, d_head) or shape_of(wv[i]) != (c, d_head):
            raise ShapeMismatch(f"key/value weights head {i} incompatible with tokens {yv.shape}")
        q = ops.matmul(x, wq[i])
        k = ops.matmul(y, wk[i])
        v = ops.matmul(y, wv[i])
        scores = ops.div(ops.matmul(q, ops.transpose(k)), math.sqrt(d_head))
        heads.append(ops.matmul(ops.softmax(scores, axis=-1), v))
    stacked = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    if shape_of(proj) != (len(wq) * d_head, e):
        raise ShapeMismatch(f"projection shape {shape_of(proj)} vs ({len(wq) * d_head}, {e})")
    return ops.matmul(stacked, proj)


def _check_conditioning(arch: DenoiserArch, cond, batch: int):
    c = arch.conditioning
    if c is None:
        if cond is not None:
            raise ConditioningMismatch("model takes no conditioning input")
        return None
    if cond is None:
        raise ConditioningMismatch("conditioning input required")
    cv = np.asarray(cond, dtype=np.float64)
    if isinstance(c, ClassConditioning):
        if cv.ndim == 1:
            if cv.shape != (c.num_classes,):
                raise ConditioningMismatch(f"class vector shape {cv.shape} vs ({c.num_classes},)")
            cv = np.broadcast_to(cv, (batch, c.num_classes))
        elif cv.shape != (batch, c.num_classes):
            raise ConditioningMismatch(f"class batch shape {cv.shape} vs ({batch}, {c.num_classes})")
        return cv
    if cv.shape != (c.length, c.width):
        raise ConditioningMismatch(f"token matrix shape {cv.shape} vs ({c.length}, {c.width})")
    return cv


def denoise(model: DenoiserModel, xt, t: int, cond=None, params=None):
    """Evaluate the network at (xt, t, cond).

    xt is one point (d,) or a batch (J, d). Returns (eps_hat, v2) with v2
    None for noise-only heads. params defaults to the model's own vector;
    passing a tape Tensor of the same layout makes the outputs
    differentiable.
    """
    if t < 1:
        raise StepOutOfRange(f"step must be >= 1, got {t}")
    arch = model.arch
    layout = model.layout
    if params is None:
        params = model.params
    xv = np.asarray(xt, dtype=np.float64)
    single = xv.ndim == 1
    if xv.shape[-1] != arch.d or xv.ndim > 2:
        raise ShapeMismatch(f"input shape {xv.shape} vs dimension {arch.d}")
    xb = xv.reshape(1, -1) if single else xv
    cv = _check_conditioning(arch, cond, xb.shape[0])

    emb = time_embedding(t, arch.emb_spec)
    h = ops.add(ops.matmul(xb, _view(params, layout, "input.w")), _view(params, layout, "input.b"))
    for k, w in enumerate(arch.hidden):
        if f"block{k}.proj.w" in layout:
            h = ops.add(
                ops.matmul(h, _view(params, layout, f"block{k}.proj.w")),
                _view(params, layout, f"block{k}.proj.b"),
            )
        te = ops.add(
            ops.matmul(emb, _view(params, layout, f"block{k}.time.w")),
            _view(params, layout, f"block{k}.time.b"),
        )
        h = ops.add(h, te)
        if isinstance(arch.conditioning, ClassConditioning):
            ypair = ops.add(
                ops.matmul(cv, _view(params, layout, f"block{k}.cls.w")),
                _view(params, layout, f"block{k}.cls.b"),
            )
            y1 = ops.slice_axis(ypair, 1, 0, w)
            y2 = ops.slice_axis(ypair, 1, w, 2 * w)
            h = adagn(h, y1, y2)
        inner = ops.tanh(
            ops.add(ops.matmul(h, _view(params, layout, f"block{k}.core.w1")),
                    _view(params, layout, f"block{k}.core.b1"))
        )
        h = ops.add(
            h,
            ops.add(ops.matmul(inner, _view(params, layout, f"block{k}.core.w2")),
                    _view(params, layout, f"block{k}.core.b2")),
        )
    if isinstance(arch.conditioning, TokenConditioning):
        tc = arch.conditioning
        wq = [_view(params, layout, f"attn.q{i}") for i in range(tc.heads)]
        wk = [_view(params, layout, f"attn.k{i}") for i in range(tc.heads)]
        wv = [_view(params, layout, f"attn.v{i}") for i in range(tc.heads)]
        h = ops.add(h, cross_attention(h, cv, wq, wk, wv, _view(params, layout, "attn.proj")))

    out = ops.add(ops.matmul(h, _view(params, layout, "head.w")), _view(params, layout, "head.b"))
    if arch.head == HEAD_DUAL:
        v1 = ops.slice_axis(out, 1, 0, arch.d)
        v2 = ops.tanh(ops.slice_axis(out, 1, arch.d, 2 * arch.d))
        if single:
            return ops.reshape(v1, (arch.d,)), ops.reshape(v2, (arch.d,))
        return v1, v2
    eps_hat = ops.reshape(out, (arch.d,)) if single else out
    return eps_hat, None
