"""Evaluation suite: discrete KL, batched classifier-based score, Frechet
feature distance, PSNR, and patchwise SSIM.

The feature extractor is a small trainable classifier: its last hidden
layer provides the feature vectors and its softmax head the class
probabilities. Sizes are configuration, not constants.
"""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    BadWindow,
    ConfigError,
    EmptyBatch,
    LengthMismatch,
    NonpositiveEntry,
    ShapeMismatch,
    TooFewSamples,
    TruncatedFile,
)
from .numerics import ADTape, RngStream, grad, ops, spd_sqrt
from .training import CHECKPOINT_MAGIC, CHECKPOINT_VERSION

# classifier probabilities are floored by smoothing so KL terms stay finite
PROB_SMOOTHING = 1e-12

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


# ------------------------------------------------------------ feature model


def _feature_layout(d: int, hidden: tuple[int, ...], feature_dim: int,
                    num_classes: int):
    sizes = []
    prev = d
    for i, w in enumerate(hidden):
        sizes.append((f"h{i}.w", (prev, w)))
        sizes.append((f"h{i}.b", (w,)))
        prev = w
    sizes.append(("feat.w", (prev, feature_dim)))
    sizes.append(("feat.b", (feature_dim,)))
    sizes.append(("cls.w", (feature_dim, num_classes)))
    sizes.append(("cls.b", (num_classes,)))
    layout = {}
    offset = 0
    for name, shape in sizes:
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout, offset


@dataclass(frozen=True)
class FeatureModel:
    """Classifier whose last hidden layer doubles as the feature map."""

    d: int
    num_classes: int
    feature_dim: int
    hidden: tuple[int, ...]
    params: np.ndarray

    def __post_init__(self):
        layout, total = _feature_layout(self.d, self.hidden, self.feature_dim,
                                        self.num_classes)
        if self.params.shape != (total,):
            raise ShapeMismatch(f"parameter vector {self.params.shape}, expected ({total},)")
        object.__setattr__(self, "_layout", layout)

    @staticmethod
    def initialized(d: int, num_classes: int, feature_dim: int,
                    hidden: tuple[int, ...], seed: int) -> "FeatureModel":
        layout, total = _feature_layout(d, hidden, feature_dim, num_classes)
        rng = RngStream(seed)
        params = np.empty(total, dtype=np.float64)
        for name, (off, shape) in layout.items():
            fan_in = shape[0] if len(shape) == 2 else layout[name[:-2] + ".w"][1][0]
            size = int(np.prod(shape))
            bound = 1.0 / math.sqrt(fan_in)
            params[off : off + size] = bound * (2.0 * rng.uniforms(size) - 1.0)
        return FeatureModel(d, num_classes, feature_dim, hidden, params)

    def _view(self, params, name):
        off, shape = self._layout[name]
        size = int(np.prod(shape))
        if isinstance(params, np.ndarray):
            return params[off : off + size].reshape(shape)
        return ops.reshape(ops.slice_axis(params, 0, off, off + size), shape)

    def _trunk(self, x: np.ndarray, params):
        h = np.asarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h.reshape(1, -1)
        if h.shape[1] != self.d:
            raise ShapeMismatch(f"input width {h.shape[1]}, expected {self.d}")
        for i in range(len(self.hidden)):
            wn = self._view(params, f"h{i}.w")
            bn = self._view(params, f"h{i}.b")
            h = ops.tanh(ops.add(ops.matmul(h, wn), bn))
        wf = self._view(params, "feat.w")
        bf = self._view(params, "feat.b")
        return ops.tanh(ops.add(ops.matmul(h, wf), bf))

    def _logits(self, x: np.ndarray, params):
        f = self._trunk(x, params)
        wc = self._view(params, "cls.w")
        bc = self._view(params, "cls.b")
        return ops.add(ops.matmul(f, wc), bc)

    def features(self, x: np.ndarray) -> np.ndarray:
        """(J, feature_dim) activations of the last hidden layer."""
        return np.asarray(self._trunk(x, self.params))

    def probs(self, x: np.ndarray) -> np.ndarray:
        """(J, num_classes) smoothed class probabilities, strictly positive."""
        p = np.asarray(ops.softmax(self._logits(x, self.params), axis=-1))
        p = (p + PROB_SMOOTHING) / (1.0 + self.num_classes * PROB_SMOOTHING)
        return p


def train_feature_model(x: np.ndarray, labels: np.ndarray, num_classes: int,
                        feature_dim: int = 8, hidden: tuple[int, ...] = (16,),
                        steps: int = 300, gamma: float = 0.05, batch: int = 32,
                        seed: int = 0) -> FeatureModel:
    """Fit the classifier by SGD on softmax cross-entropy."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"{x.shape[0]} points vs {labels.shape[0]} labels")
    if x.shape[0] < 1:
        raise TooFewSamples("need at least one training point")
    fm = FeatureModel.initialized(x.shape[1], num_classes, feature_dim, hidden, seed)
    rng = RngStream(seed).split(1)
    params = fm.params.copy()
    n = x.shape[0]
    for _ in range(steps):
        idx = rng.integers(min(batch, n), low=0, high=n)
        xb, yb = x[idx], labels[idx]
        onehot = np.zeros((xb.shape[0], num_classes))
        onehot[np.arange(xb.shape[0]), yb] = 1.0
        tape = ADTape()
        leaf = tape.tensor(params)
        work = FeatureModel(fm.d, num_classes, feature_dim, hidden, params)
        p = ops.softmax(work._logits(xb, leaf), axis=-1)
        loss = ops.mul(ops.total(ops.mul(ops.ln(p), onehot)), -1.0 / xb.shape[0])
        g = grad(loss, [leaf])[0]
        params = params - gamma * g
    return FeatureModel(fm.d, num_classes, feature_dim, hidden, params)


def save_feature_model(path: str, fm: FeatureModel) -> None:
    """Same binary container as denoiser checkpoints, tagged kind=feature."""
    meta = {
        "d": fm.d,
        "feature_dim": fm.feature_dim,
        "hidden": list(fm.hidden),
        "kind": "feature",
        "num_classes": fm.num_classes,
        "param_count": int(fm.params.size),
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(fm.params.astype("<f4").tobytes())


def load_feature_model(path: str) -> FeatureModel:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 8:
        raise TruncatedFile(f"feature checkpoint {path} too short for its header")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise BadMagic(f"feature checkpoint {path} has wrong magic bytes")
    pos = len(CHECKPOINT_MAGIC)
    meta_len = struct.unpack_from("<I", raw, pos + 4)[0]
    pos += 8
    if len(raw) < pos + meta_len:
        raise TruncatedFile(f"feature checkpoint {path} metadata truncated")
    meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    if meta.get("kind") != "feature":
        raise ConfigError(f"{path} is not a feature-model checkpoint")
    count = int(meta["param_count"])
    if len(raw) < pos + 4 * count:
        raise TruncatedFile(f"feature checkpoint {path} parameter block truncated")
    params = np.frombuffer(raw[pos : pos + 4 * count], dtype="<f4").astype(np.float64)
    return FeatureModel(int(meta["d"]), int(meta["num_classes"]),
                        int(meta["feature_dim"]),
                        tuple(int(w) for w in meta["hidden"]), params)


# ------------------------------------------------------------ report type


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: float
    k_samples: int
    m_samples: int = 0
    batches: int = 1
    std: float = 0.0

    def __post_init__(self):
        if self.k_samples < 1 or self.m_samples < 0 or self.batches < 1:
            raise TooFewSamples(
                f"invalid counts k={self.k_samples} m={self.m_samples} b={self.batches}")


# ------------------------------------------------------------ divergences


def discrete_kl(v: np.ndarray, w: np.ndarray) -> float:
    """sum_i ln(v_i / w_i) v_i over strictly positive vectors."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape or v.ndim != 1:
        raise LengthMismatch(f"shapes {v.shape} vs {w.shape}")
    if np.any(v <= 0.0) or np.any(w <= 0.0):
        raise NonpositiveEntry("divergence needs strictly positive entries")
    return float(np.sum(np.log(v / w) * v))


def inception_score(samples: np.ndarray, fm, batches: int = 1) -> MetricReport:
    """Per batch exp of the mean KL from each classifier output to the batch
    average; reported as mean and std across batches."""
    samples = np.asarray(samples, dtype=np.float64)
    count = samples.shape[0]
    if batches < 1 or count < batches:
        raise EmptyBatch(f"cannot split {count} samples into {batches} batches")
    scores = []
    for part in np.array_split(samples, batches):
        p = np.asarray(fm.probs(part))
        avg = p.mean(axis=0)
        kls = [discrete_kl(row, avg) for row in p]
        scores.append(math.exp(float(np.mean(kls))))
    value = float(np.mean(scores))
    std = float(np.std(scores, ddof=1)) if batches >= 2 else 0.0
    return MetricReport("is", value, k_samples=count, batches=batches, std=std)


def fid(gen: np.ndarray, ref: np.ndarray, fm) -> float:
    """||mu_x - mu_y||^2 + tr(Sx + Sy - 2 (Sx^1/2 Sy Sx^1/2)^1/2) on features.

    Covariances use the K-1 normalization; the root argument is symmetrized
    by the similarity trick so the matrix square root stays on symmetric
    positive input.
    """
    gx = np.asarray(fm.features(np.asarray(gen, dtype=np.float64)))
    gy = np.asarray(fm.features(np.asarray(ref, dtype=np.float64)))
    if gx.shape[0] < 2 or gy.shape[0] < 2:
        raise TooFewSamples("feature covariance needs at least 2 samples per set")
    mu_x, mu_y = gx.mean(axis=0), gy.mean(axis=0)
    sx = np.cov(gx.T, ddof=1).reshape(gx.shape[1], gx.shape[1])
    sy = np.cov(gy.T, ddof=1).reshape(gy.shape[1], gy.shape[1])
    rx = spd_sqrt(sx)
    cross = spd_sqrt(rx @ sy @ rx)
    gap = mu_x - mu_y
    return float(gap @ gap + np.trace(sx) + np.trace(sy) - 2.0 * np.trace(cross))


# ------------------------------------------------------------ image quality

PSNR_CAP = 1e9


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) for unit-range images; infinite when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _patches(img: np.ndarray, window: int) -> np.ndarray:
    h, w = img.shape
    return (img.reshape(h // window, window, w // window, window)
            .transpose(0, 2, 1, 3).reshape(-1, window * window))


def ssim(a: np.ndarray, b: np.ndarray, window: int = 4,
         constants: tuple[float, float] = (SSIM_C1, SSIM_C2)) -> float:
    """Mean over non-overlapping patches of the three-term similarity
    ((2 mu_a mu_b + c1)(2 cov + c2)) / ((mu_a^2 + mu_b^2 + c1)(var_a + var_b + c2)).

    Patch moments use the K-1 normalization; the value lies in [-1, 1] and
    equals 1 exactly when the images coincide.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise BadWindow("patch similarity expects 2-D images")
    if window < 2 or a.shape[0] % window or a.shape[1] % window:
        raise BadWindow(f"window {window} must tile image dims {a.shape}")
    c1, c2 = constants
    pa, pb = _patches(a, window), _patches(b, window)
    n = pa.shape[1]
    mu_a, mu_b = pa.mean(axis=1), pb.mean(axis=1)
    da, db = pa - mu_a[:, None], pb - mu_b[:, None]
    var_a = np.sum(da * da, axis=1) / (n - 1)
    var_b = np.sum(db * db, axis=1) / (n - 1)
    cov = np.sum(da * db, axis=1) / (n - 1)
    per_patch = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return float(np.mean(per_patch))
