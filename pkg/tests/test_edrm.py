import numpy as np
import pytest

from wecdg import edrm, nn
from wecdg.errors import OddDimensions, ShapeMismatch
from wecdg.gradcheck import check_gradients, weighted_sum_loss
from wecdg.params import ParameterTree
from wecdg.tensor import Tensor
from wecdg.wavelet import dwt2


def _tree(init, seed=0, jitter=0.1):
    tree = ParameterTree(seed)
    init(tree.sub(""))
    r = np.random.default_rng(seed + 100)
    for _, t in tree.items():
        t.data = t.data + jitter * r.standard_normal(t.shape)
    return tree


def test_irs_shape_contract(rng):
    tree = _tree(lambda p: edrm.init_irs(p, 8))
    x = rng.standard_normal((32, 32, 8))
    x_en, x_hf = edrm.irs(Tensor(x), tree.sub(""))
    assert x_en.shape == (32, 32, 8) and x_hf.shape == (16, 16, 24)
    sb = dwt2(Tensor(x))
    assert np.array_equal(x_hf.data, np.concatenate([sb.c_H.data, sb.c_V.data, sb.c_D.data], axis=-1))


def test_irs_identity_configuration(rng):
    tree = _tree(lambda p: edrm.init_irs(p, 4))
    edrm.identity_configure_irs(tree.sub(""))
    x = rng.standard_normal((2, 8, 6, 4))
    assert np.max(np.abs(edrm.irs(Tensor(x), tree.sub(""))[0].data - x)) < 1e-12


def test_irs_rejects_odd_dims(rng):
    tree = _tree(lambda p: edrm.init_irs(p, 2))
    with pytest.raises(OddDimensions):
        edrm.irs(Tensor(rng.standard_normal((5, 4, 2))), tree.sub(""))


def test_hf_prior_examples(rng):
    tree = _tree(lambda p: edrm.init_hf_prior(p, 8))
    assert edrm.hf_prior(Tensor(rng.standard_normal((16, 16, 24))), tree.sub("")).shape == (32, 32, 8)
    const = edrm.hf_prior(Tensor(np.broadcast_to(rng.standard_normal(24), (5, 3, 24)).copy()), tree.sub("")).data
    np.testing.assert_allclose(const, np.broadcast_to(const[0, 0], const.shape), atol=1e-12)
    for n in ("adapt.w", "adapt.b", "align.w", "align.b"):
        tree[n].data[:] = 0.0
    zero = edrm.hf_prior(Tensor(rng.standard_normal((4, 4, 24))), tree.sub("")).data
    assert np.array_equal(zero, np.broadcast_to(tree["ln.b"].data, zero.shape))
    with pytest.raises(ShapeMismatch):
        edrm.hf_prior(Tensor(np.zeros((4, 4, 12))), tree.sub(""))


def test_drs_zero_attention_output_is_gffn(rng):
    tree = _tree(lambda p: edrm.init_drs(p, 4))
    prior, x_en = rng.standard_normal((2, 6, 8, 4)), rng.standard_normal((2, 6, 8, 4))
    assert edrm.drs(Tensor(prior), Tensor(x_en), tree.sub("")).shape == x_en.shape
    tree["out.w"].data[:] = 0.0
    tree["out.b"].data[:] = 0.0
    out = edrm.drs(Tensor(prior), Tensor(x_en), tree.sub("")).data
    np.testing.assert_array_equal(out, nn.gffn(Tensor(x_en), tree.sub("gffn")).data)
    with pytest.raises(ShapeMismatch):
        edrm.drs(Tensor(prior[:, :4]), Tensor(x_en), tree.sub(""))


def test_edrm_zero_projection_identity_and_stacking(rng):
    x = rng.standard_normal((2, 8, 12, 4))
    tree = _tree(lambda p: edrm.init_edrm(p, 4))
    assert edrm.edrm_forward(Tensor(x), tree.sub("")).shape == x.shape
    edrm.zero_output_projections(tree.sub(""))
    assert np.max(np.abs(edrm.edrm_forward(Tensor(x), tree.sub("")).data - x)) < 1e-12
    for k in (1, 3):
        stack = _tree(lambda p: [edrm.init_edrm(p.sub(str(i)), 4) for i in range(k)])
        y = Tensor(x)
        for i in range(k):
            y = edrm.edrm_forward(y, stack.sub(str(i)))
        assert y.shape == x.shape


def _loss_check(fn, tensors, r):
    return check_gradients(lambda: weighted_sum_loss(fn(), r), tensors, max_coords=8)


def test_irs_gradcheck_c4(rng):
    # with 4 channels the LayerNorm is well conditioned, so every parameter is probed
    tree = _tree(lambda p: edrm.init_irs(p, 4, state_dim=2))
    x = Tensor(rng.standard_normal((8, 8, 4)))
    r = rng.standard_normal((8, 8, 4))
    names = ("lin_in.w", "dw.w", "ss2d.w_delta", "ss2d.w_b", "ln.g", "res.w", "gffn.w1.w", "hf.w")
    res = _loss_check(lambda: edrm.irs(x, tree.sub(""))[0], {"x": x, **{n: tree[n] for n in names}}, r)
    assert res.passed, res.per_tensor


def test_drs_gradcheck_c4(rng):
    tree = _tree(lambda p: edrm.init_drs(p, 4))
    prior, x_en = Tensor(rng.standard_normal((8, 8, 4))), Tensor(rng.standard_normal((8, 8, 4)))
    r = rng.standard_normal((8, 8, 4))
    names = ("q.w", "k.w", "v.w", "out.w", "log_lam", "ln_q.g", "gffn.w2.w")
    res = _loss_check(lambda: edrm.drs(prior, x_en, tree.sub("")),
                      {"prior": prior, "x_en": x_en, **{n: tree[n] for n in names}}, r)
    assert res.passed, res.per_tensor
