"""Exposure consistency alignment: descriptor-conditioned attention block.

``ecam_forward`` chains three pre-norm residual sub-blocks::

    x1 = x  + Fuse(softmax(Q_t K^T / lam) V)       (DCA, queries from e_t)
    x2 = x1 + W_o(V' softmax(Qc^T Kc / lam))       (channel self-attention)
    x3 = gffn(x2)

DCA turns the descriptor into ``query_tokens`` queries of width C; keys and
values come from the LayerNorm'd feature map, subsampled with stride ``s``
(a strided 1x1 projection) whenever H*W exceeds ``token_budget``.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from . import tensor as T
from .errors import ShapeMismatch
from .params import ParamView
from .tensor import Tensor, as_tensor


def kv_stride(h: int, w: int, budget: int) -> int:
    """Smallest stride s with ceil(h/s)*ceil(w/s) <= budget."""
    s = 1
    while math.ceil(h / s) * math.ceil(w / s) > budget:
        s += 1
    return s


def kv_tokens(xn: Tensor, budget: int) -> Tensor:
    """Flatten ``[B,H,W,C]`` to ``[B, n, C]`` tokens after strided subsampling."""
    bsz, h, w, c = xn.shape
    s = kv_stride(h, w, budget)
    if s > 1:
        xn = xn[:, ::s, ::s, :]
    return T.reshape(xn, (bsz, -1, c))


def temperature(p: ParamView, name: str = "log_lam") -> Tensor:
    return T.exp(p[name])


def init_dca(p: ParamView, channels: int, desc_dim: int, query_tokens: int = 4):
    nn.init_ln(p, "ln", channels)
    nn.init_linear(p, "q", desc_dim, query_tokens * channels)
    nn.init_linear(p, "k", channels, channels, bias=False)
    nn.init_linear(p, "v", channels, channels, bias=False)
    nn.init_linear(p, "fuse", query_tokens * channels, channels)
    p.add("log_lam", (1,), init=math.log(math.sqrt(channels)))


def _batched_descriptor(e_t, bsz: int) -> Tensor:
    e_t = as_tensor(e_t)
    if e_t.ndim == 1:
        e_t = T.reshape(e_t, (1, -1))
    if e_t.shape[0] == 1 and bsz > 1:
        e_t = e_t + T.zeros((bsz, e_t.shape[1]))
    if e_t.shape[0] != bsz:
        raise ShapeMismatch(f"{e_t.shape[0]} descriptors for a batch of {bsz}")
    return e_t


def dca(x, e_t, p: ParamView, token_budget: int = 1024) -> Tensor:
    """Degradation-context cross-attention with a global broadcast-add fusion."""
    x, squeezed = nn._as4d(as_tensor(x))
    bsz, h, w, c = x.shape
    e_t = _batched_descriptor(getattr(e_t, "embedding", e_t), bsz)
    if e_t.shape[1] != p["q.w"].shape[0]:
        raise ShapeMismatch(f"descriptor dim {e_t.shape[1]} != {p['q.w'].shape[0]}")
    tokens = p["q.w"].shape[1] // c
    q = T.reshape(nn.apply_linear(p, "q", e_t), (bsz, tokens, c))
    kv = kv_tokens(nn.apply_ln(p, "ln", x), token_budget)
    k = nn.apply_linear(p, "k", kv)
    v = nn.apply_linear(p, "v", kv)
    att = nn.attention(q, k, v, temperature(p))                      # [B, t, C]
    fused = nn.apply_linear(p, "fuse", T.reshape(att, (bsz, tokens * c)))
    out = x + T.reshape(fused, (bsz, 1, 1, c))
    return nn._restore(out, squeezed)


def init_self_attention(p: ParamView, channels: int):
    nn.init_ln(p, "ln", channels)
    nn.init_linear(p, "qkv", channels, 3 * channels, bias=False)
    nn.init_linear(p, "out", channels, channels)
    p.add("log_lam", (1,), init=0.0)


def self_attention(x, p: ParamView) -> Tensor:
    """Transposed (channel x channel) attention; q and k are L2-normalised
    over the spatial axis, so logits are cosines scaled by 1/lam."""
    x, squeezed = nn._as4d(as_tensor(x))
    bsz, h, w, c = x.shape
    qkv = nn.apply_linear(p, "qkv", T.reshape(nn.apply_ln(p, "ln", x), (bsz, h * w, c)))
    qkv = T.swapaxes(qkv, 1, 2)                                      # [B, 3C, HW]
    q, k, v = T.split(qkv, 3, axis=1)
    att = nn.attention(nn.l2_normalize(q), nn.l2_normalize(k), v, temperature(p))  # [B, C, HW]
    y = nn.apply_linear(p, "out", T.swapaxes(att, 1, 2))
    out = x + T.reshape(y, (bsz, h, w, c))
    return nn._restore(out, squeezed)


def init_ecam(p: ParamView, channels: int, desc_dim: int, query_tokens: int = 4,
              expansion: float = 2.0):
    init_dca(p.sub("dca"), channels, desc_dim, query_tokens)
    init_self_attention(p.sub("sa"), channels)
    nn.init_gffn(p.sub("gffn"), channels, expansion)


def ecam_forward(x, e_t, p: ParamView, token_budget: int = 1024) -> Tensor:
    x = dca(x, e_t, p.sub("dca"), token_budget)
    x = self_attention(x, p.sub("sa"))
    return nn.gffn(x, p.sub("gffn"))


OUTPUT_PROJECTIONS = ("dca.fuse", "sa.out", "gffn.out")


def zero_output_projections(p: ParamView) -> None:
    """Zero every sub-block's output projection, making the block the identity."""
    for name in OUTPUT_PROJECTIONS:
        for suffix in (".w", ".b"):
            t = p[name + suffix]
            t.data = np.zeros_like(t.data)
