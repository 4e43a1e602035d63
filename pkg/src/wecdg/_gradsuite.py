"""Cases for the finite-difference suite run by ``gradcheck.run_suite``.

Each case builds ``(fn, tensors, max_coords)``: ``fn()`` returns the scalar
``sum(block(...) * R)`` for a fixed random ``R``, and ``tensors`` names the
inputs and parameters whose gradients get probed.
"""

from __future__ import annotations

import numpy as np

from . import ecam, edrm, losses, nn
from . import tensor as T
from .model import ModelConfig, init_model, network
from .params import ParameterTree
from .tensor import Tensor
from .wavelet import dwt2, iwt2


def _weighted(block, rng):
    """Wrap ``block()`` so its output is reduced against fixed random weights."""
    shape = block().shape
    weights = Tensor(rng.standard_normal(shape))
    return lambda: (block() * weights).sum()


def _tree(seed, init, jitter: float = 0.1) -> ParameterTree:
    """Initialise a block and perturb every parameter so none sits at a
    symmetric default (unit gains, zero biases)."""
    tree = ParameterTree(seed)
    init(tree.sub(""))
    rng = np.random.default_rng([seed, 99])
    for t in tree.entries.values():
        t.data = t.data + jitter * rng.standard_normal(t.shape)
    return tree


def _pick(tree: ParameterTree, names) -> dict[str, Tensor]:
    return {n: tree[n] for n in names}


def cases(seed: int = 0):
    rng = np.random.default_rng([seed, 7])

    def randn(*shape, scale=1.0):
        return Tensor(scale * rng.standard_normal(shape), requires_grad=True)

    def c_matmul():
        a, b = randn(3, 4), randn(4, 5)
        return _weighted(lambda: T.matmul(a, b), rng), {"a": a, "b": b}, None

    def c_elementwise():
        a = randn(2, 3)
        b = Tensor(rng.uniform(0.5, 2.0, (3,)), requires_grad=True)

        def block():
            return T.gelu(a) * T.sigmoid(b) + T.silu(a) / b + T.softplus(a) - T.log(b) * T.exp(a * 0.3)

        return _weighted(block, rng), {"a": a, "b": b}, None

    def c_softmax():
        a = randn(3, 5)
        return _weighted(lambda: T.softmax(a, axis=-1) + T.log_softmax(a, axis=0), rng), {"a": a}, None

    def c_layer_norm():
        x, g, b = randn(2, 3, 4, 5), randn(5), randn(5)
        return _weighted(lambda: nn.layer_norm(x, g, b), rng), {"x": x, "g": g, "b": b}, 12

    def c_attention():
        q, k, v = randn(2, 3, 4), randn(2, 5, 4), randn(2, 5, 4)
        lam = Tensor(np.array([1.7]), requires_grad=True)
        fn = _weighted(lambda: nn.attention(q, k, v, lam), rng)
        return fn, {"q": q, "k": k, "v": v, "lam": lam}, 12

    def c_conv():
        x = randn(2, 5, 6, 3)
        w, b = randn(3, 3, 3, 4, scale=0.3), randn(4)
        w2 = randn(3, 3, 4, 2, scale=0.3)
        dw, db = randn(3, 3, 2), randn(2)

        def block():
            y = nn.conv2d(x, w, b)
            y = nn.conv2d(y, w2, None, stride=2)
            return nn.dwconv3x3(y, dw, db)

        return _weighted(block, rng), {"x": x, "w": w, "b": b, "w2": w2, "dw": dw, "db": db}, 10

    def c_resample():
        x = randn(1, 3, 5, 2)
        fn = _weighted(lambda: nn.reflect_pad(nn.upsample2x(x), 2, 3), rng)
        return fn, {"x": x}, None

    def c_wavelet():
        x = randn(4, 6, 2)
        ca, ch, cv, cd = (randn(2, 3, 2) for _ in range(4))

        def block():
            sb = dwt2(x)
            y = iwt2((ca * sb.c_A, ch, cv + sb.c_V, cd * sb.c_D))
            return T.concat([T.reshape(y, (-1,)), T.reshape(sb.c_H, (-1,))], axis=0)

        return _weighted(block, rng), {"x": x, "ca": ca, "ch": ch, "cv": cv, "cd": cd}, None

    def c_selective_scan():
        x = randn(2, 5, 3)
        delta = Tensor(rng.uniform(0.1, 1.0, (2, 5, 3)), requires_grad=True)
        a = Tensor(-rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        bm, cm, d = randn(2, 5, 4), randn(2, 5, 4), randn(3)
        fn = _weighted(lambda: nn.selective_scan(x, delta, a, bm, cm, d), rng)
        return fn, {"x": x, "delta": delta, "a": a, "b": bm, "c": cm, "d": d}, 12

    def c_gffn():
        tree = _tree(seed, lambda p: nn.init_gffn(p, 4, 2.0))
        x = randn(1, 4, 4, 4)
        fn = _weighted(lambda: nn.gffn(x, tree.sub("")), rng)
        return fn, {"x": x, **_pick(tree, ["ln.g", "w1.w", "w2.b", "dw1.w", "dw2.b", "out.w"])}, 8

    def c_ss2d():
        tree = _tree(seed, lambda p: nn.init_ss2d(p, 4, 3))
        x = randn(1, 3, 4, 4)
        fn = _weighted(lambda: nn.ss2d(x, tree.sub("")), rng)
        names = ["w_delta", "b_delta", "a_log", "w_b", "w_c", "d_skip", "out.w"]
        return fn, {"x": x, **_pick(tree, names)}, 8

    # With two channels a LayerNorm is nearly a sign function, so tensors
    # upstream of one get gradients of order eps / d^3 that central
    # differences cannot resolve. The two-channel cases probe what lies
    # downstream of those norms; the four-channel twins probe everything.
    def c_irs():
        tree = _tree(seed, lambda p: edrm.init_irs(p, 2, 2.0, 3, 2.0))
        x = randn(1, 8, 8, 2)
        fn = _weighted(lambda: edrm.irs(x, tree.sub(""))[0], rng)
        names = ["ln.g", "ln.b", "res.w", "res.b", "gffn.w1.w", "gffn.dw2.w", "gffn.out.w", "hf.w"]
        return fn, {"x": x, **_pick(tree, names)}, 6

    def c_irs_c4():
        tree = _tree(seed, lambda p: edrm.init_irs(p, 4, 2.0, 3, 2.0))
        x = randn(1, 8, 8, 4)
        fn = _weighted(lambda: edrm.irs(x, tree.sub(""))[0], rng)
        names = ["lin_in.w", "dw.w", "ss2d.w_delta", "ss2d.w_b", "ss2d.w_c", "ss2d.a_log",
                 "ss2d.d_skip", "ss2d.out.w", "ln.g", "res.w", "gffn.out.w", "hf.w"]
        return fn, {"x": x, **_pick(tree, names)}, 6

    def c_hf_prior():
        tree = _tree(seed, lambda p: edrm.init_hf_prior(p, 2))
        x = randn(1, 3, 4, 6)
        fn = _weighted(lambda: edrm.hf_prior(x, tree.sub("")), rng)
        return fn, {"x": x, **_pick(tree, ["adapt.w", "align.w", "ln.b"])}, 8

    def c_drs():
        tree = _tree(seed, lambda p: edrm.init_drs(p, 2, 2.0))
        prior, x_en = randn(1, 8, 8, 2), randn(1, 8, 8, 2)
        fn = _weighted(lambda: edrm.drs(prior, x_en, tree.sub(""), token_budget=16), rng)
        names = ["ln_q.g", "ln_kv.b", "q.w", "k.w", "v.w", "out.w", "log_lam", "gffn.w1.w"]
        return fn, {"x_en": x_en, **_pick(tree, names)}, 6

    def c_drs_c4():
        tree = _tree(seed, lambda p: edrm.init_drs(p, 4, 2.0))
        prior, x_en = randn(1, 8, 8, 4), randn(1, 8, 8, 4)
        fn = _weighted(lambda: edrm.drs(prior, x_en, tree.sub(""), token_budget=16), rng)
        names = ["ln_q.g", "ln_kv.b", "q.w", "k.w", "v.w", "out.w", "log_lam", "gffn.w1.w"]
        return fn, {"prior": prior, "x_en": x_en, **_pick(tree, names)}, 6

    def c_edrm():
        tree = _tree(seed, lambda p: edrm.init_edrm(p, 4, 2.0, 3, 2.0))
        x = randn(1, 8, 8, 4)
        fn = _weighted(lambda: edrm.edrm_forward(x, tree.sub("")), rng)
        names = ["irs.lin_in.w", "irs.ss2d.w_delta", "irs.hf.w", "prior.adapt.w", "prior.align.w",
                 "drs.q.w", "drs.gffn.dw1.w", "proj.w"]
        return fn, {"x": x, **_pick(tree, names)}, 6

    def c_self_attention():
        tree = _tree(seed, lambda p: ecam.init_self_attention(p, 4))
        x = randn(2, 3, 3, 4)
        fn = _weighted(lambda: ecam.self_attention(x, tree.sub("")), rng)
        return fn, {"x": x, **_pick(tree, ["ln.g", "qkv.w", "out.w", "log_lam"])}, 8

    def c_dca():
        tree = _tree(seed, lambda p: ecam.init_dca(p, 4, 6, 2))
        x, e = randn(2, 4, 4, 4), randn(2, 6)
        fn = _weighted(lambda: ecam.dca(x, e, tree.sub(""), token_budget=6), rng)
        names = ["ln.b", "q.w", "k.w", "v.w", "fuse.w", "log_lam"]
        return fn, {"x": x, "e_t": e, **_pick(tree, names)}, 8

    def c_ecam():
        tree = _tree(seed, lambda p: ecam.init_ecam(p, 4, 6, 2, 2.0))
        x, e = randn(1, 4, 4, 4), randn(1, 6)
        fn = _weighted(lambda: ecam.ecam_forward(x, e, tree.sub(""), token_budget=1024), rng)
        names = ["dca.q.w", "dca.fuse.b", "sa.qkv.w", "gffn.dw1.w"]
        return fn, {"x": x, "e_t": e, **_pick(tree, names)}, 6

    def c_full_forward():
        cfg = ModelConfig(seed=seed)
        tree = init_model(cfg)
        jit = np.random.default_rng([seed, 98])
        for t in tree.entries.values():
            t.data = t.data + 0.02 * jit.standard_normal(t.shape)
        x = Tensor(rng.uniform(0.3, 0.7, (1, 16, 16, 3)), requires_grad=True)
        e = randn(1, cfg.descriptor_dim)
        fn = _weighted(lambda: network(x, e, tree, cfg, clamp=False), rng)
        names = ["stem.w", "ecam_front.dca.q.w", "enc.1.w", "edrm.0.irs.dw.w", "edrm.1.prior.adapt.w",
                 "edrm.3.drs.k.w", "dec.0.w", "ecam_back.sa.out.w", "head.w"]
        return fn, {"x": x, "e_t": e, **_pick(tree, names)}, 4

    def c_total_loss():
        gt = Tensor(rng.uniform(0.05, 0.95, (1, 16, 16, 3)))
        neg = Tensor(np.clip(gt.data ** 2.2 * 0.7, 0, 1))
        out = Tensor(np.clip(gt.data + 0.1 * rng.standard_normal(gt.shape), 0.01, 0.99), requires_grad=True)
        return (lambda: losses.total_loss(out, gt, neg)[0]), {"out": out}, 24

    return [
        ("matmul", c_matmul),
        ("elementwise", c_elementwise),
        ("softmax", c_softmax),
        ("layer_norm", c_layer_norm),
        ("attention", c_attention),
        ("convs", c_conv),
        ("resample", c_resample),
        ("wavelet", c_wavelet),
        ("selective_scan", c_selective_scan),
        ("gffn", c_gffn),
        ("ss2d", c_ss2d),
        ("irs", c_irs),
        ("irs_c4", c_irs_c4),
        ("hf_prior", c_hf_prior),
        ("drs", c_drs),
        ("drs_c4", c_drs_c4),
        ("edrm_forward", c_edrm),
        ("self_attention", c_self_attention),
        ("dca", c_dca),
        ("ecam_forward", c_ecam),
        ("full_forward", c_full_forward),
        ("total_loss", c_total_loss),
    ]


BLOCKS = tuple(name for name, _ in cases(0))
