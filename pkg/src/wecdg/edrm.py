"""Exposure restoration / detail reconstruction block.

Illumination stage (half resolution, on the Haar low band)::

    X^L, X^H  = DWT(x)                                  X^H = [cH | cV | cD]
    X1        = LN(SS2D(SiLU(DWConv(Linear_{C->eC}(X^L)))))   SS2D projects eC -> C
    X_en^L    = GFFN(X1 + Linear(X^L))
    x_en      = IWT(X_en^L, split3(Conv1x1(X^H)))

Detail stage (full resolution)::

    prior = LN(Up(Conv1x1_{3C->C}(Conv1x1_{3C->3C}(X^H))))
    y     = GFFN(x_en + W_o(attn(prior -> x_en)))        HFCA, queries from prior

The block output is ``x + proj(y)``; with ``proj`` zeroed it is the identity.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from . import tensor as T
from .ecam import kv_tokens, temperature
from .errors import OddDimensions, ShapeMismatch
from .params import ParamView
from .tensor import Tensor, as_tensor
from .wavelet import dwt2, iwt2


def init_irs(p: ParamView, channels: int, expansion: float = 2.0, state_dim: int = 4,
             gffn_expansion: float = 2.0):
    wide = nn.expand(channels, expansion)
    nn.init_linear(p, "lin_in", channels, wide)
    nn.init_dwconv(p, "dw", wide)
    nn.init_ss2d(p.sub("ss2d"), wide, state_dim, out_channels=channels)
    nn.init_ln(p, "ln", channels)
    nn.init_linear(p, "res", channels, channels)
    nn.init_gffn(p.sub("gffn"), channels, gffn_expansion)
    nn.init_linear(p, "hf", 3 * channels, 3 * channels)


def irs(x, p: ParamView) -> tuple[Tensor, Tensor]:
    """Returns ``(x_en [..,H,W,C], x_hf [..,H/2,W/2,3C])``."""
    x = as_tensor(x)
    h, w = x.shape[-3], x.shape[-2]
    if h % 2 or w % 2:
        raise OddDimensions(f"IRS needs even H and W, got {h}x{w}")
    sb = dwt2(x)
    x_low = sb.c_A
    x_hf = T.concat(list(sb.high()), axis=-1)
    z = nn.apply_linear(p, "lin_in", x_low)
    z = T.silu(nn.dwconv3x3(z, p["dw.w"], p["dw.b"]))
    x1 = nn.apply_ln(p, "ln", nn.ss2d(z, p.sub("ss2d")))
    x2 = x1 + nn.apply_linear(p, "res", x_low)
    x_en_low = nn.gffn(x2, p.sub("gffn"))
    ch, cv, cd = T.split(nn.apply_linear(p, "hf", x_hf), 3, axis=-1)
    return iwt2((x_en_low, ch, cv, cd)), x_hf


def init_hf_prior(p: ParamView, channels: int):
    nn.init_linear(p, "adapt", 3 * channels, 3 * channels)
    nn.init_linear(p, "align", 3 * channels, channels)
    nn.init_ln(p, "ln", channels)


def hf_prior(x_hf, p: ParamView) -> Tensor:
    x_hf = as_tensor(x_hf)
    if x_hf.shape[-1] != p["adapt.w"].shape[0]:
        raise ShapeMismatch(f"hf prior expects {p['adapt.w'].shape[0]} channels, got {x_hf.shape}")
    z = nn.apply_linear(p, "align", nn.apply_linear(p, "adapt", x_hf))
    return nn.apply_ln(p, "ln", nn.upsample2x(z))


def init_drs(p: ParamView, channels: int, gffn_expansion: float = 2.0):
    nn.init_ln(p, "ln_q", channels)
    nn.init_ln(p, "ln_kv", channels)
    nn.init_linear(p, "q", channels, channels, bias=False)
    nn.init_linear(p, "k", channels, channels, bias=False)
    nn.init_linear(p, "v", channels, channels, bias=False)
    nn.init_linear(p, "out", channels, channels)
    p.add("log_lam", (1,), init=math.log(math.sqrt(channels)))
    nn.init_gffn(p.sub("gffn"), channels, gffn_expansion)


def hfca(x_prior, x_en, p: ParamView, token_budget: int = 1024) -> Tensor:
    """Cross-attention: queries from the prior, keys/values from x_en; residual on x_en."""
    x_prior, squeezed = nn._as4d(as_tensor(x_prior))
    x_en, _ = nn._as4d(as_tensor(x_en))
    if x_prior.shape != x_en.shape:
        raise ShapeMismatch(f"prior {x_prior.shape} vs x_en {x_en.shape}")
    bsz, h, w, c = x_en.shape
    q = nn.apply_linear(p, "q", T.reshape(nn.apply_ln(p, "ln_q", x_prior), (bsz, h * w, c)))
    kv = kv_tokens(nn.apply_ln(p, "ln_kv", x_en), token_budget)
    att = nn.attention(q, nn.apply_linear(p, "k", kv), nn.apply_linear(p, "v", kv),
                       temperature(p))
    out = x_en + T.reshape(nn.apply_linear(p, "out", att), (bsz, h, w, c))
    return nn._restore(out, squeezed)


def drs(x_prior, x_en, p: ParamView, token_budget: int = 1024) -> Tensor:
    return nn.gffn(hfca(x_prior, x_en, p, token_budget), p.sub("gffn"))


def init_edrm(p: ParamView, channels: int, expansion: float = 2.0, state_dim: int = 4,
              gffn_expansion: float = 2.0):
    init_irs(p.sub("irs"), channels, expansion, state_dim, gffn_expansion)
    init_hf_prior(p.sub("prior"), channels)
    init_drs(p.sub("drs"), channels, gffn_expansion)
    nn.init_linear(p, "proj", channels, channels)


def edrm_forward(x, p: ParamView, token_budget: int = 1024) -> Tensor:
    x = as_tensor(x)
    x_en, x_hf = irs(x, p.sub("irs"))
    y = drs(hf_prior(x_hf, p.sub("prior")), x_en, p.sub("drs"), token_budget)
    return x + nn.apply_linear(p, "proj", y)


def _set(t: Tensor, value) -> None:
    t.data = np.broadcast_to(np.asarray(value, dtype=t.dtype), t.shape).copy()


def identity_configure_irs(p: ParamView) -> None:
    """Zero the learned low-band delta and make the residual / HF maps identities,
    so ``irs(x)[0] == x`` up to rounding."""
    c = p["res.w"].shape[0]
    _set(p["ln.g"], 0.0)
    _set(p["ln.b"], 0.0)
    _set(p["res.w"], np.eye(c))
    _set(p["res.b"], 0.0)
    _set(p["gffn.out.w"], 0.0)
    _set(p["gffn.out.b"], 0.0)
    _set(p["hf.w"], np.eye(3 * c))
    _set(p["hf.b"], 0.0)


def zero_output_projections(p: ParamView) -> None:
    _set(p["proj.w"], 0.0)
    _set(p["proj.b"], 0.0)
