import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from diffusionlab.denoiser import (
    HEAD_DUAL,
    ClassConditioning,
    DenoiserArch,
    DenoiserModel,
    TimeEmbeddingSpec,
    TokenConditioning,
    adagn,
    build_layout,
    cross_attention,
    denoise,
    init_params,
    time_embedding,
)
from diffusionlab.errors import (
    ConditioningMismatch,
    DegenerateEmbedding,
    ShapeMismatch,
    StepOutOfRange,
)
from diffusionlab.numerics import ADTape, grad, ops


# ------------------------------------------------------------ time embedding

def test_time_embedding_zero_probe():
    emb = time_embedding(0, TimeEmbeddingSpec(8))
    np.testing.assert_array_equal(emb[:4], np.zeros(4))
    np.testing.assert_array_equal(emb[4:], np.ones(4))


def test_time_embedding_unit_angle():
    # c=2: first frequency exponent is 1/(c-1) = 1, so t=10000 gives sin(1)
    emb = time_embedding(10000, TimeEmbeddingSpec(4))
    assert emb[0] == pytest.approx(math.sin(1.0), abs=1e-12)
    assert emb[2] == pytest.approx(math.cos(1.0), abs=1e-12)


def test_time_embedding_range():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t = int(rng.integers(0, 10**6))
        d_emb = 2 * int(rng.integers(2, 40))
        emb = time_embedding(t, TimeEmbeddingSpec(d_emb))
        assert emb.shape == (d_emb,)
        assert np.all(emb >= -1.0) and np.all(emb <= 1.0)


def test_time_embedding_degenerate():
    for d_emb in (2, 3, 0, 7):
        with pytest.raises(DegenerateEmbedding):
            TimeEmbeddingSpec(d_emb)
    with pytest.raises(StepOutOfRange):
        time_embedding(-1, TimeEmbeddingSpec(4))


def test_time_embedding_injective_at_desk_scale():
    spec = TimeEmbeddingSpec(64)
    table = np.stack([time_embedding(t, spec) for t in range(1, 10_001)])
    tree = cKDTree(table)
    dist, _ = tree.query(table, k=2, p=np.inf)
    assert float(np.min(dist[:, 1])) > 1e-6


# ------------------------------------------------------------ adagn

def test_adagn_identity_modulation_is_group_norm():
    rng = np.random.default_rng(5)
    x = rng.normal(size=12)
    out = adagn(x, np.ones(12), np.zeros(12), beta=0.0, gamma=1.0, eps=0.0, groups=1)
    want = (x - x.mean()) / x.std()
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_adagn_normalizes_per_group():
    rng = np.random.default_rng(6)
    x = rng.normal(loc=3.0, scale=2.0, size=(4, 24))
    out = adagn(x, np.ones(24), np.zeros(24), eps=1e-12, groups=4)
    grouped = out.reshape(4, 4, 6)  # rows x groups x in-group
    np.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-10)
    np.testing.assert_allclose(grouped.std(axis=2) ** 2, 1.0, rtol=1e-6)


def test_adagn_elementwise_when_no_repetition():
    rng = np.random.default_rng(7)
    x = rng.normal(size=6)
    y1 = rng.normal(size=6)
    y2 = rng.normal(size=6)
    gn = adagn(x, np.ones(6), np.zeros(6), eps=1e-12)
    out = adagn(x, y1, y2, eps=1e-12)
    np.testing.assert_allclose(out, y1 * gn + y2, rtol=1e-12)


def test_adagn_tiling_period():
    # coordinate i + D*j is modulated by signal entry i
    x = np.zeros(6)
    y1 = np.zeros(2)
    y2 = np.array([10.0, 20.0])
    out = adagn(x, y1, y2, eps=1.0)
    np.testing.assert_array_equal(out, [10.0, 20.0, 10.0, 20.0, 10.0, 20.0])


def test_adagn_gamma_beta_affine():
    rng = np.random.default_rng(8)
    x = rng.normal(size=8)
    plain = adagn(x, np.ones(8), np.zeros(8), beta=0.0, gamma=1.0, eps=1e-12)
    scaled = adagn(x, np.ones(8), np.zeros(8), beta=0.25, gamma=2.0, eps=1e-12)
    np.testing.assert_allclose(scaled, 2.0 * plain + 0.25, rtol=1e-12)


def test_adagn_shape_validation():
    x = np.zeros(6)
    with pytest.raises(ShapeMismatch):
        adagn(x, np.ones(4), np.zeros(4))  # 4 does not divide 6
    with pytest.raises(ShapeMismatch):
        adagn(x, np.ones(6), np.zeros(5))
    with pytest.raises(ShapeMismatch):
        adagn(x, np.ones(6), np.zeros(6), groups=4)  # 4 does not divide 6
    with pytest.raises(ShapeMismatch):
        adagn(np.zeros((2, 6)), np.ones((3, 6)), np.zeros((3, 6)))


# ------------------------------------------------------------ cross attention

def _ca_oracle(x, y, wq, wk, wv, proj):
    # scalar-loop evaluation, no vectorized shortcuts
    i_n, _ = x.shape
    l = y.shape[0]
    dh = wq[0].shape[1]
    cols = []
    for hi in range(len(wq)):
        q, k, v = x @ wq[hi], y @ wk[hi], y @ wv[hi]
        out = np.zeros((i_n, dh))
        for r in range(i_n):
            scores = np.array([float(q[r] @ k[j]) / math.sqrt(dh) for j in range(l)])
            w = np.exp(scores - scores.max())
            w = w / w.sum()
            for j in range(l):
                out[r] += w[j] * v[j]
        cols.append(out)
    return np.concatenate(cols, axis=1) @ proj


def test_cross_attention_single_token():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 4))
    y = rng.normal(size=(1, 5))
    wq = [rng.normal(size=(4, 2))]
    wk = [rng.normal(size=(5, 2))]
    wv = [rng.normal(size=(5, 2))]
    proj = rng.normal(size=(2, 4))
    out = cross_attention(x, y, wq, wk, wv, proj)
    # softmax over one key is 1, every query row sees the same value row
    want = np.tile((y @ wv[0]) @ proj, (3, 1))
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_cross_attention_zero_queries_average_values():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(2, 4))
    y = rng.normal(size=(5, 3))
    wq = [np.zeros((4, 2))]
    wk = [rng.normal(size=(3, 2))]
    wv = [rng.normal(size=(3, 2))]
    proj = rng.normal(size=(2, 4))
    out = cross_attention(x, y, wq, wk, wv, proj)
    want = np.tile((y @ wv[0]).mean(axis=0) @ proj, (2, 1))
    np.testing.assert_allclose(out, want, rtol=1e-12)


def test_cross_attention_matches_loop_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4))
    y = rng.normal(size=(2, 5))
    wq = [rng.normal(size=(4, 3)) for _ in range(2)]
    wk = [rng.normal(size=(5, 3)) for _ in range(2)]
    wv = [rng.normal(size=(5, 3)) for _ in range(2)]
    proj = rng.normal(size=(6, 4))
    out = cross_attention(x, y, wq, wk, wv, proj)
    np.testing.assert_allclose(out, _ca_oracle(x, y, wq, wk, wv, proj), atol=1e-12)


def test_cross_attention_rows_sum_to_one():
    # all-ones tokens with identity value/projection expose the softmax rows
    rng = np.random.default_rng(12)
    e = 3
    x = rng.normal(size=(4, e))
    y = np.ones((5, e))
    wq = [rng.normal(size=(e, e))]
    wk = [rng.normal(size=(e, e))]
    wv = [np.eye(e)]
    out = cross_attention(x, y, wq, wk, wv, np.eye(e))
    np.testing.assert_allclose(out, np.ones((4, e)), atol=1e-12)


def test_cross_attention_shape_validation():
    x, y = np.zeros((2, 4)), np.zeros((3, 5))
    good_q = [np.zeros((4, 2))]
    good_k = [np.zeros((5, 2))]
    good_v = [np.zeros((5, 2))]
    with pytest.raises(ShapeMismatch):
        cross_attention(x, y, [np.zeros((3, 2))], good_k, good_v, np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        cross_attention(x, y, good_q, [np.zeros((4, 2))], good_v, np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        cross_attention(x, y, good_q, good_k, good_v, np.zeros((3, 4)))
    with pytest.raises(ShapeMismatch):
        cross_attention(np.zeros(4), y, good_q, good_k, good_v, np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        cross_attention(x, y, [], [], [], np.zeros((2, 4)))


# ------------------------------------------------------------ model

def test_layout_tiles_exactly():
    arch = DenoiserArch(d=3, hidden=(8, 12), d_emb=6, head=HEAD_DUAL,
                        conditioning=ClassConditioning(4))
    layout, total = build_layout(arch)
    seen = np.zeros(total, dtype=bool)
    for offset, shape in layout.values():
        size = int(np.prod(shape))
        assert not seen[offset : offset + size].any()
        seen[offset : offset + size] = True
    assert seen.all()


def test_init_params_deterministic_and_bounded():
    arch = DenoiserArch(d=2, hidden=(8,), d_emb=4)
    p1 = init_params(arch, 99)
    p2 = init_params(arch, 99)
    np.testing.assert_array_equal(p1, p2)
    assert not np.array_equal(p1, init_params(arch, 100))
    layout, _ = build_layout(arch)
    off, shape = layout["input.w"]
    assert np.max(np.abs(p1[off : off + 16])) <= 1.0 / math.sqrt(2)


def test_zero_params_give_zero_output():
    arch = DenoiserArch(d=2, hidden=(8, 8), d_emb=4, head=HEAD_DUAL,
                        conditioning=ClassConditioning(3))
    _, total = build_layout(arch)
    model = DenoiserModel(arch, np.zeros(total))
    eps_hat, v2 = denoise(model, np.array([0.7, -0.7]), 5, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(eps_hat, np.zeros(2))
    np.testing.assert_array_equal(v2, np.zeros(2))


def test_denoise_deterministic():
    arch = DenoiserArch(d=3, hidden=(16,), d_emb=8)
    model = DenoiserModel.initialized(arch, 3)
    x = np.array([0.1, 0.2, 0.3])
    a, _ = denoise(model, x, 7)
    b, _ = denoise(model, x, 7)
    np.testing.assert_array_equal(a, b)


def test_denoise_batch_matches_single_rows():
    arch = DenoiserArch(d=2, hidden=(8, 8), d_emb=4, head=HEAD_DUAL)
    model = DenoiserModel.initialized(arch, 17)
    xb = np.random.default_rng(4).normal(size=(5, 2))
    eb, vb = denoise(model, xb, 3)
    for j in range(5):
        ej, vj = denoise(model, xb[j], 3)
        np.testing.assert_allclose(eb[j], ej, atol=1e-14)
        np.testing.assert_allclose(vb[j], vj, atol=1e-14)


def test_dual_head_codomain():
    arch = DenoiserArch(d=4, hidden=(16,), d_emb=6, head=HEAD_DUAL)
    model = DenoiserModel.initialized(arch, 23)
    xb = np.random.default_rng(2).normal(scale=3.0, size=(100, 4))
    _, v2 = denoise(model, xb, 9)
    assert np.all(v2 > -1.0) and np.all(v2 < 1.0)


def test_conditioning_mismatch():
    plain = DenoiserModel.initialized(DenoiserArch(2, (8,), 4), 1)
    with pytest.raises(ConditioningMismatch):
        denoise(plain, np.zeros(2), 1, np.array([1.0, 0.0]))

    cls = DenoiserModel.initialized(
        DenoiserArch(2, (8,), 4, conditioning=ClassConditioning(3)), 1)
    with pytest.raises(ConditioningMismatch):
        denoise(cls, np.zeros(2), 1)
    with pytest.raises(ConditioningMismatch):
        denoise(cls, np.zeros(2), 1, np.array([1.0, 0.0]))
    with pytest.raises(ConditioningMismatch):
        denoise(cls, np.zeros((4, 2)), 1, np.zeros((3, 3)))

    tok = DenoiserModel.initialized(
        DenoiserArch(2, (8,), 4, conditioning=TokenConditioning(2, 5, 2, 4)), 1)
    with pytest.raises(ConditioningMismatch):
        denoise(tok, np.zeros(2), 1, np.zeros((3, 5)))
    with pytest.raises(ConditioningMismatch):
        denoise(tok, np.zeros(2), 1)


def test_denoise_rejects_bad_step_and_params():
    model = DenoiserModel.initialized(DenoiserArch(2, (8,), 4), 1)
    with pytest.raises(StepOutOfRange):
        denoise(model, np.zeros(2), 0)
    with pytest.raises(ShapeMismatch):
        DenoiserModel(model.arch, np.zeros(model.param_count + 1))
    with pytest.raises(ShapeMismatch):
        denoise(model, np.zeros(3), 1)


def _fd_vs_ad(arch, cond, seed):
    model = DenoiserModel.initialized(arch, seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=arch.d)
    eps = rng.normal(size=arch.d)

    def loss(p):
        e_hat, _ = denoise(model, x, 4, cond, params=p)
        r = eps - e_hat
        return float(np.sum(r * r))

    tape = ADTape()
    leaf = tape.tensor(model.params)
    e_hat, _ = denoise(model, x, 4, cond, params=leaf)
    r = ops.sub(eps, e_hat)
    g = grad(ops.total(ops.mul(r, r)), [leaf])[0]

    h = 1e-6
    fd = np.zeros_like(model.params)
    base = model.params
    for i in range(base.size):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (loss(up) - loss(down)) / (2 * h)
    return float(np.linalg.norm(fd - g) / np.linalg.norm(fd))


def test_denoise_gradient_matches_finite_differences():
    rel = _fd_vs_ad(DenoiserArch(2, (6, 6), 4), None, 7)
    assert rel <= 1e-4
    rel = _fd_vs_ad(
        DenoiserArch(2, (6, 6), 4, head=HEAD_DUAL, conditioning=ClassConditioning(3)),
        np.array([0.0, 1.0, 0.0]), 11)
    assert rel <= 1e-4
    rel = _fd_vs_ad(
        DenoiserArch(2, (6,), 4, conditioning=TokenConditioning(2, 5, 2, 3)),
        np.random.default_rng(0).normal(size=(2, 5)), 13)
    assert rel <= 1e-4


def test_denoise_no_nan_over_many_evaluations():
    arch = DenoiserArch(d=3, hidden=(16, 16), d_emb=8, head=HEAD_DUAL)
    model = DenoiserModel.initialized(arch, 31)
    rng = np.random.default_rng(6)
    total = 0
    for t in (1, 2, 10, 500, 10_000):
        xb = rng.normal(scale=5.0, size=(20_000, 3))
        e_hat, v2 = denoise(model, xb, t)
        assert np.all(np.isfinite(e_hat)) and np.all(np.isfinite(v2))
        total += xb.shape[0]
    assert total == 100_000


def test_varied_widths_use_projection():
    arch = DenoiserArch(d=2, hidden=(8, 12), d_emb=4)
    layout, _ = build_layout(arch)
    assert "block1.proj.w" in layout
    model = DenoiserModel.initialized(arch, 5)
    out, _ = denoise(model, np.array([0.3, 0.4]), 2)
    assert out.shape == (2,)
    assert np.all(np.isfinite(out))
