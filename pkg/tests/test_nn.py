import numpy as np
import pytest

from wecdg import nn
from wecdg import tensor as T
from wecdg.errors import NonPositiveTemperature, ShapeMismatch
from wecdg.gradcheck import check_gradients, weighted_sum_loss
from wecdg.params import ParameterTree
from wecdg.tensor import Tensor


def _conv_reference(x, w, b, stride):
    """Direct loop over output pixels with zero padding 1."""
    bsz, h, wd, _ = x.shape
    k = w.shape[0]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((bsz, ho, wo, w.shape[-1]))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k, :]
            out[:, i, j] = np.einsum("bklc,klco->bo", patch, w)
    return out + (0 if b is None else b)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_direct_loop(rng, stride):
    x = rng.standard_normal((2, 7, 6, 3))
    w = rng.standard_normal((3, 3, 3, 5))
    b = rng.standard_normal(5)
    out = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
    np.testing.assert_allclose(out, _conv_reference(x, w, b, stride), atol=1e-12)


def test_conv1x1_identity(rng):
    x = rng.standard_normal((4, 5, 3))
    assert np.array_equal(nn.conv1x1(Tensor(x), Tensor(np.eye(3))).data, x)


def test_dwconv_delta_kernel_and_average(rng):
    x = rng.standard_normal((1, 5, 4, 2))
    delta = np.zeros((3, 3, 2))
    delta[1, 1] = 1.0
    assert np.array_equal(nn.dwconv3x3(Tensor(x), Tensor(delta)).data, x)
    img = rng.standard_normal((3, 3, 1))
    avg = nn.dwconv3x3(Tensor(img), Tensor(np.full((3, 3, 1), 1.0 / 9))).data
    assert abs(avg[1, 1, 0] - img.mean()) < 1e-15
    with pytest.raises(ShapeMismatch):
        nn.dwconv3x3(Tensor(x), Tensor(np.zeros((3, 3, 3))))


def test_dwconv_matches_grouped_reference(rng):
    x = rng.standard_normal((2, 5, 6, 3))
    w = rng.standard_normal((3, 3, 3))
    full = np.zeros((3, 3, 3, 3))
    for c in range(3):
        full[:, :, c, c] = w[:, :, c]
    np.testing.assert_allclose(nn.dwconv3x3(Tensor(x), Tensor(w)).data,
                               _conv_reference(x, full, None, 1), atol=1e-12)


def test_upsample_constant_shape_and_ramp():
    up = nn.upsample2x(Tensor(np.full((16, 16, 3), 0.7))).data
    assert up.shape == (32, 32, 3)
    np.testing.assert_allclose(up, 0.7, rtol=1e-15)
    ramp = np.arange(4.0)[None, :, None] * np.ones((2, 1, 1))
    row = nn.upsample2x(Tensor(ramp)).data[0, :, 0]
    # interior outputs sit a quarter pixel from the nearest source pixel
    np.testing.assert_allclose(row, [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0], atol=1e-15)


def test_reflect_pad_matches_numpy(rng):
    x = rng.standard_normal((1, 5, 4, 2))
    out = nn.reflect_pad(Tensor(x), 3, 2).data
    assert np.array_equal(out, np.pad(x, ((0, 0), (0, 3), (0, 2), (0, 0)), mode="reflect"))


def test_layer_norm_examples(rng):
    g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
    out = nn.layer_norm(Tensor([1.0, -1.0]), g, b).data
    np.testing.assert_allclose(out, np.array([1.0, -1.0]) / np.sqrt(1.0 + 1e-6), rtol=1e-15)
    beta = rng.standard_normal(4)
    const = nn.layer_norm(Tensor(np.full((3, 4), 2.5)), Tensor(rng.standard_normal(4)), Tensor(beta)).data
    np.testing.assert_allclose(const, np.broadcast_to(beta, (3, 4)), atol=1e-15)
    y = nn.layer_norm(Tensor(rng.standard_normal((5, 6))), Tensor(np.full(6, 2.0)), Tensor(beta[:1].repeat(6))).data
    np.testing.assert_allclose(y.mean(axis=-1), beta[0], atol=1e-12)
    with pytest.raises(ShapeMismatch):
        nn.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


def test_attention_examples(rng):
    v = rng.standard_normal((1, 3))
    out = nn.attention(Tensor(rng.standard_normal((4, 2))), Tensor(rng.standard_normal((1, 2))), Tensor(v), 0.7)
    np.testing.assert_allclose(out.data, np.repeat(v, 4, axis=0), rtol=1e-15)
    q, k, vv = rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal((5, 2))
    hot = nn.attention(Tensor(q), Tensor(k), Tensor(vv), 1e9).data
    assert np.max(np.abs(hot - vv.mean(axis=0))) < 1e-6
    sym = nn.attention(Tensor(np.zeros((2, 1))), Tensor(np.zeros((2, 1))), Tensor([[2.0], [4.0]]), 1.0)
    assert np.array_equal(sym.data, [[3.0], [3.0]])
    for lam in (0.0, -1.0):
        with pytest.raises(NonPositiveTemperature):
            nn.attention(Tensor(q), Tensor(k), Tensor(vv), lam)


def test_attention_rows_convex_and_shift_invariant(rng):
    q, k, v = (Tensor(rng.standard_normal(s)) for s in ((3, 4), (6, 4), (6, 2)))
    probs = T.softmax(T.matmul(q, T.swapaxes(k, 0, 1)) / 1.3, axis=-1).data
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    out = nn.attention(q, k, v, 1.3).data
    assert np.all(out >= v.data.min(axis=0) - 1e-12) and np.all(out <= v.data.max(axis=0) + 1e-12)
    shifted = nn.attention(q, k, v, 1.3, logit_shift=17.5).data
    np.testing.assert_allclose(shifted, out, atol=1e-12)


def _tree(init, seed=0):
    tree = ParameterTree(seed)
    init(tree.sub(""))
    return tree


def test_gffn_zero_output_is_identity_and_shape(rng):
    tree = _tree(lambda p: nn.init_gffn(p, 3, 2.0))
    x = rng.standard_normal((2, 5, 4, 3))
    assert nn.gffn(Tensor(x), tree.sub("")).shape == x.shape
    tree["out.w"].data[:] = 0.0
    tree["out.b"].data[:] = 0.0
    assert np.array_equal(nn.gffn(Tensor(x), tree.sub("")).data, x)


def test_gffn_gradcheck_4x4x3(rng):
    tree = _tree(lambda p: nn.init_gffn(p, 3, 2.0))
    x = Tensor(rng.standard_normal((4, 4, 3)))
    r = rng.standard_normal((4, 4, 3))
    tensors = {"x": x, **{n: tree[n] for n in ("ln.g", "w1.w", "w2.w", "dw1.w", "dw2.w", "out.w")}}
    res = check_gradients(lambda: weighted_sum_loss(nn.gffn(x, tree.sub("")), r), tensors, max_coords=10)
    assert res.passed, res.per_tensor


def _naive_scan(x, delta, a, bm, cm, d):
    s, length, dim = x.shape
    y = np.zeros_like(x)
    for si in range(s):
        h = np.zeros((dim, a.shape[1]))
        for t in range(length):
            h = np.exp(delta[si, t][:, None] * a) * h + (delta[si, t] * x[si, t])[:, None] * bm[si, t][None, :]
            y[si, t] = h @ cm[si, t] + d * x[si, t]
    return y


def test_selective_scan_matches_naive_recurrence(rng):
    x = rng.standard_normal((2, 6, 3))
    delta = rng.uniform(0.1, 1.0, (2, 6, 3))
    a = -rng.uniform(0.5, 2.0, (3, 4))
    bm, cm, d = rng.standard_normal((2, 6, 4)), rng.standard_normal((2, 6, 4)), rng.standard_normal(3)
    out = nn.selective_scan(*(Tensor(v) for v in (x, delta, a, bm, cm, d))).data
    np.testing.assert_allclose(out, _naive_scan(x, delta, a, bm, cm, d), atol=1e-12)


def _identity_out(tree, c):
    tree["out.w"].data = np.eye(c)
    tree["out.b"].data = np.zeros(c)


def test_ss2d_single_pixel_hand_unroll(rng):
    c = 3
    tree = _tree(lambda p: nn.init_ss2d(p, c, 2))
    _identity_out(tree, c)
    x = rng.standard_normal((1, 1, c))
    out = nn.ss2d(Tensor(x), tree.sub("")).data[0, 0]
    xv = x[0, 0]
    delta = np.logaddexp(0.0, xv @ tree["w_delta"].data + tree["b_delta"].data)
    bv, cv = xv @ tree["w_b"].data, xv @ tree["w_c"].data
    expected = 4 * (delta * xv) * (bv @ cv) + 4 * tree["d_skip"].data * xv
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_ss2d_memoryless_limit_is_pointwise(rng):
    c = 2
    tree = _tree(lambda p: nn.init_ss2d(p, c, 2))
    tree["a_log"].data = np.full((c, 2), 60.0)
    x = rng.standard_normal((3, 4, c))
    perm = rng.permutation(12)
    out = nn.ss2d(Tensor(x), tree.sub("")).data.reshape(12, c)
    shuffled = x.reshape(12, c)[perm].reshape(3, 4, c)
    out_perm = nn.ss2d(Tensor(shuffled), tree.sub("")).data.reshape(12, c)
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


def test_ss2d_scan_directions_and_shape(rng):
    orders = nn.scan_orders(3, 4)
    assert len(orders) == 4
    for order, inv in orders:
        assert np.array_equal(order[inv], np.arange(12))
    tree = _tree(lambda p: nn.init_ss2d(p, 4, 3, out_channels=2))
    assert nn.ss2d(Tensor(rng.standard_normal((2, 3, 5, 4))), tree.sub("")).shape == (2, 3, 5, 2)


def test_ss2d_gradcheck_4x4x2(rng):
    tree = _tree(lambda p: nn.init_ss2d(p, 2, 2))
    x = Tensor(rng.standard_normal((4, 4, 2)))
    r = rng.standard_normal((4, 4, 2))
    tensors = {"x": x, **{n: tree[n] for n in ("w_delta", "b_delta", "a_log", "w_b", "w_c", "d_skip", "out.w")}}
    res = check_gradients(lambda: weighted_sum_loss(nn.ss2d(x, tree.sub("")), r), tensors, max_coords=8)
    assert res.passed, res.per_tensor


def test_block_config_validation():
    assert nn.BlockConfig(5, 2.0).hidden == 10
    with pytest.raises(ValueError):
        nn.BlockConfig(4, expansion=0.5)
    with pytest.raises(ValueError):
        nn.BlockConfig(4, state_dim=0)
    with pytest.raises(NonPositiveTemperature):
        nn.BlockConfig(4, attn_temperature=0.0)
