import math

import numpy as np
import pytest

from diffusionlab.errors import (
    BadWindow,
    EmptyBatch,
    LengthMismatch,
    NonpositiveEntry,
    ShapeMismatch,
    TooFewSamples,
)
from diffusionlab.metrics import (
    FeatureModel,
    MetricReport,
    discrete_kl,
    fid,
    inception_score,
    psnr,
    ssim,
    train_feature_model,
)
from diffusionlab.numerics import RngStream


class IdentityFeatures:
    """Pass-through feature map with a uniform classifier."""

    def __init__(self, num_classes=4):
        self.num_classes = num_classes

    def features(self, x):
        return np.asarray(x, dtype=np.float64)

    def probs(self, x):
        x = np.asarray(x)
        return np.full((x.shape[0], self.num_classes), 1.0 / self.num_classes)


class SignClassifier:
    """Near-one-hot outputs keyed to the sign of the first coordinate."""

    def __init__(self, eps=1e-6):
        self.eps = eps

    def probs(self, x):
        x = np.asarray(x)
        out = np.empty((x.shape[0], 2))
        for j in range(x.shape[0]):
            if x[j, 0] < 0:
                out[j] = (1.0 - self.eps, self.eps)
            else:
                out[j] = (self.eps, 1.0 - self.eps)
        return out

    def features(self, x):
        return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- KL


def test_discrete_kl_zero_for_equal_vectors():
    v = np.array([0.2, 0.3, 0.5])
    assert discrete_kl(v, v) == 0.0


def test_discrete_kl_frozen_example():
    got = discrete_kl(np.array([0.5, 0.5]), np.array([0.25, 0.75]))
    want = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    assert got == pytest.approx(want, rel=1e-13)
    assert got == pytest.approx(0.143841, abs=1e-6)


def test_discrete_kl_nonnegative_on_probability_pairs():
    rng = RngStream(5)
    for _ in range(50):
        v = rng.uniforms(6) + 1e-3
        w = rng.uniforms(6) + 1e-3
        v, w = v / v.sum(), w / w.sum()
        assert discrete_kl(v, w) >= -1e-15


def test_discrete_kl_validation():
    good = np.array([0.5, 0.5])
    with pytest.raises(LengthMismatch):
        discrete_kl(good, np.array([1.0, 1.0, 1.0]))
    with pytest.raises(NonpositiveEntry):
        discrete_kl(np.array([0.0, 1.0]), good)
    with pytest.raises(NonpositiveEntry):
        discrete_kl(good, np.array([-0.1, 1.1]))


# ---------------------------------------------------------------- IS


def test_inception_score_uniform_classifier_is_exactly_one():
    samples = RngStream(1).normals(40).reshape(20, 2)
    rep = inception_score(samples, IdentityFeatures(), batches=4)
    assert rep.value == 1.0
    assert rep.std == 0.0
    assert rep.k_samples == 20
    assert rep.batches == 4


def test_inception_score_single_sample_is_one():
    rep = inception_score(np.array([[0.3, -0.2]]), SignClassifier(), batches=1)
    assert rep.value == 1.0


def test_inception_score_two_sample_hand_oracle():
    # one sample per class: batch average (1/2, 1/2); each KL is
    # (1-e) ln 2(1-e) + e ln 2e, and the score exponentiates their mean
    eps = 1e-6
    samples = np.array([[-1.0, 0.0], [1.0, 0.0]])
    rep = inception_score(samples, SignClassifier(eps), batches=1)
    kl = (1 - eps) * math.log(2 * (1 - eps)) + eps * math.log(2 * eps)
    assert rep.value == pytest.approx(math.exp(kl), abs=1e-9)


def test_inception_score_at_least_one_for_any_classifier():
    fm = train_feature_model(np.array([[1.0, 0.0], [-1.0, 0.0]] * 10),
                             np.array([0, 1] * 10), num_classes=2, steps=20, seed=3)
    samples = RngStream(9).normals(60).reshape(30, 2)
    rep = inception_score(samples, fm, batches=3)
    assert rep.value >= 1.0 - 1e-12


def test_inception_score_empty_batch():
    samples = np.zeros((3, 2))
    with pytest.raises(EmptyBatch):
        inception_score(samples, IdentityFeatures(), batches=4)
    with pytest.raises(EmptyBatch):
        inception_score(samples, IdentityFeatures(), batches=0)


def test_metric_report_validates_counts():
    with pytest.raises(TooFewSamples):
        MetricReport("is", 1.0, k_samples=0)
    with pytest.raises(TooFewSamples):
        MetricReport("fid", 1.0, k_samples=5, batches=0)


# ---------------------------------------------------------------- FID


def _fid_eigen_oracle(x, y):
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    sx = np.cov(x.T, ddof=1)
    sy = np.cov(y.T, ddof=1)
    lx, vx = np.linalg.eigh(sx)
    rx = vx @ np.diag(np.sqrt(np.clip(lx, 0, None))) @ vx.T
    lm = np.linalg.eigvalsh(rx @ sy @ rx)
    cross = np.sum(np.sqrt(np.clip(lm, 0, None)))
    gap = mu_x - mu_y
    return float(gap @ gap + np.trace(sx) + np.trace(sy) - 2.0 * cross)


def test_fid_identical_sets_is_zero():
    x = RngStream(2).normals(100).reshape(50, 2)
    assert abs(fid(x, x.copy(), IdentityFeatures())) <= 1e-6


def test_fid_pure_mean_shift():
    x = RngStream(3).normals(200).reshape(100, 2)
    delta = np.array([0.7, -0.4])
    got = fid(x + delta, x, IdentityFeatures())
    assert got == pytest.approx(float(delta @ delta), abs=1e-6)


def test_fid_matches_eigendecomposition_oracle():
    rng = RngStream(4)
    x = rng.normals(160).reshape(80, 2) @ np.array([[1.0, 0.3], [0.0, 0.7]])
    y = rng.normals(160).reshape(80, 2) @ np.array([[0.6, -0.2], [0.1, 1.1]]) + 0.5
    got = fid(x, y, IdentityFeatures())
    assert got == pytest.approx(_fid_eigen_oracle(x, y), abs=1e-8)


def test_fid_symmetric_and_nonnegative():
    rng = RngStream(6)
    x = rng.normals(120).reshape(60, 2) * 1.4
    y = rng.normals(120).reshape(60, 2) + 0.3
    assert fid(x, y, IdentityFeatures()) == pytest.approx(
        fid(y, x, IdentityFeatures()), abs=1e-8)
    assert fid(x, y, IdentityFeatures()) >= -1e-8


def test_fid_too_few_samples():
    with pytest.raises(TooFewSamples):
        fid(np.zeros((1, 2)), np.zeros((5, 2)), IdentityFeatures())
    with pytest.raises(TooFewSamples):
        fid(np.zeros((5, 2)), np.zeros((1, 2)), IdentityFeatures())


# ---------------------------------------------------------------- features


def test_feature_model_training_separates_clusters():
    rng = RngStream(11)
    n = 200
    half = rng.normals(2 * n).reshape(n, 2) * 0.3
    x = np.vstack([half[: n // 2] + (2.0, 0.0), half[n // 2 :] + (-2.0, 0.0)])
    labels = np.array([0] * (n // 2) + [1] * (n // 2))
    fm = train_feature_model(x, labels, num_classes=2, feature_dim=4,
                             hidden=(8,), steps=400, gamma=0.1, seed=1)
    p = fm.probs(x)
    assert np.all(p > 0.0)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-10
    acc = float(np.mean(p.argmax(axis=1) == labels))
    assert acc >= 0.95
    assert fm.features(x).shape == (n, 4)


def test_feature_model_zero_params_is_uniform():
    fm = FeatureModel.initialized(2, 5, 4, (6,), 0)
    fm = FeatureModel(2, 5, 4, (6,), np.zeros_like(fm.params))
    p = fm.probs(np.array([[0.4, -1.0]]))
    assert np.allclose(p, 0.2, atol=1e-12)
    rep = inception_score(RngStream(1).normals(20).reshape(10, 2), fm, batches=2)
    assert rep.value == 1.0


def test_feature_model_shape_validation():
    fm = FeatureModel.initialized(2, 3, 4, (6,), 0)
    with pytest.raises(ShapeMismatch):
        fm.probs(np.zeros((4, 3)))
    with pytest.raises(ShapeMismatch):
        FeatureModel(2, 3, 4, (6,), np.zeros(7))
    with pytest.raises(LengthMismatch):
        train_feature_model(np.zeros((4, 2)), np.zeros(3), num_classes=2)


# ---------------------------------------------------------------- PSNR


def test_psnr_identical_images_infinite():
    a = RngStream(7).uniforms(64).reshape(8, 8)
    assert psnr(a, a.copy()) == math.inf


def test_psnr_constant_offset_twenty_db():
    a = np.full((8, 8), 0.3)
    b = np.full((8, 8), 0.4)
    assert psnr(a, b) == pytest.approx(20.0, rel=1e-12)


def test_psnr_symmetry_and_shape_check():
    rng = RngStream(8)
    a = rng.uniforms(64).reshape(8, 8)
    b = rng.uniforms(64).reshape(8, 8)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ShapeMismatch):
        psnr(a, np.zeros((4, 4)))


# ---------------------------------------------------------------- SSIM


def test_ssim_self_similarity_is_exactly_one():
    a = RngStream(9).uniforms(64).reshape(8, 8)
    assert ssim(a, a.copy(), window=4) == 1.0


def test_ssim_inversion_lowers_similarity():
    a = RngStream(10).uniforms(64).reshape(8, 8)
    assert ssim(a, 1.0 - a, window=4) < 1.0


def _ssim_patch_loop_oracle(a, b, window, c1, c2):
    vals = []
    for r in range(0, a.shape[0], window):
        for c in range(0, a.shape[1], window):
            pa = a[r : r + window, c : c + window].ravel()
            pb = b[r : r + window, c : c + window].ravel()
            n = pa.size
            ma = sum(pa) / n
            mb = sum(pb) / n
            va = sum((x - ma) ** 2 for x in pa) / (n - 1)
            vb = sum((x - mb) ** 2 for x in pb) / (n - 1)
            cov = sum((x - ma) * (y - mb) for x, y in zip(pa, pb)) / (n - 1)
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def test_ssim_checkerboard_shift_matches_patch_oracle():
    board = np.indices((8, 8)).sum(axis=0) % 2
    shifted = np.roll(board, 1, axis=1)
    got = ssim(board.astype(float), shifted.astype(float), window=4,
               constants=(1e-4, 9e-4))
    want = _ssim_patch_loop_oracle(board.astype(float), shifted.astype(float),
                                   4, 1e-4, 9e-4)
    assert got == pytest.approx(want, abs=1e-10)
    assert -1.0 <= got <= 1.0


def test_ssim_random_images_in_range_and_validated():
    rng = RngStream(12)
    a = rng.uniforms(144).reshape(12, 12)
    b = rng.uniforms(144).reshape(12, 12)
    v = ssim(a, b, window=3)
    assert -1.0 <= v <= 1.0
    with pytest.raises(BadWindow):
        ssim(a, b, window=5)
    with pytest.raises(BadWindow):
        ssim(a.ravel(), b.ravel(), window=4)
    with pytest.raises(ShapeMismatch):
        ssim(a, np.zeros((6, 6)), window=3)
