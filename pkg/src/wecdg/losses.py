"""Training objective: L1 + SSIM + contrastive + perceptual, plus eval metrics.

The perceptual and contrastive terms compare features of a small frozen
random convnet (the "critic"). Its weights are drawn from a fixed seed and
never trained, so the features are reproducible and differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import nn
from . import tensor as T
from .errors import ShapeMismatch
from .params import param_rng
from .tensor import Tensor, as_tensor, no_grad

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
CONTRAST_EPS = 1e-7
PSNR_CAP = 99.0
CRITIC_SEED = 20240917
CRITIC_CHANNELS = (16, 32, 32)
PERCEPTUAL_STAGES = (1, 2)       # zero-based: stages 2 and 3


@dataclass
class LossWeights:
    l1: float = 0.7
    ssim: float = 0.3
    con: float = 0.1
    per: float = 0.3

    def __post_init__(self):
        for k in ("l1", "ssim", "con", "per"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(self.l1 * factor, self.ssim * factor, self.con * factor, self.per * factor)


def _pair(out, gt) -> tuple[Tensor, Tensor]:
    out, gt = as_tensor(out), as_tensor(gt)
    if out.shape != gt.shape:
        raise ShapeMismatch(f"loss inputs differ in shape: {out.shape} vs {gt.shape}")
    return out, gt


def l1_loss(out, gt) -> Tensor:
    out, gt = _pair(out, gt)
    return T.mean(T.tabs(out - gt))


# -- SSIM --------------------------------------------------------------------

def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


@lru_cache(maxsize=32)
def _valid_filter(n: int, size: int) -> np.ndarray:
    """[n - size + 1, n] matrix applying the 1-D Gaussian at every valid offset."""
    g = gaussian_window(size)
    m = np.zeros((n - size + 1, n))
    for i in range(n - size + 1):
        m[i, i:i + size] = g
    return m


def window_size(h: int, w: int) -> int:
    """11, or the largest odd size that fits images smaller than 11."""
    size = min(SSIM_WINDOW, h, w)
    return size if size % 2 else size - 1


def ssim_map(out, gt) -> Tensor:
    """Per-window, per-channel SSIM values ``[B, H', W', C]`` (valid windows only)."""
    out, gt = _pair(out, gt)
    x, squeezed = nn._as4d(out)
    y, _ = nn._as4d(gt)
    _, h, w, _ = x.shape
    size = window_size(h, w)
    mh, mw = _valid_filter(h, size), _valid_filter(w, size)

    def blur(t):
        return nn.separable(t, mh, mw)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    s_xx = blur(x * x) - mu_xx
    s_yy = blur(y * y) - mu_yy
    s_xy = blur(x * y) - mu_xy
    num = (mu_xy * 2.0 + SSIM_C1) * (s_xy * 2.0 + SSIM_C2)
    den = (mu_xx + mu_yy + SSIM_C1) * (s_xx + s_yy + SSIM_C2)
    return num / den


def ssim(out, gt) -> Tensor:
    """Mean SSIM over windows, channels and batch; a scalar tensor in [-1, 1]."""
    return T.mean(ssim_map(out, gt))


def ssim_loss(out, gt) -> Tensor:
    return 1.0 - ssim(out, gt)


# -- critic features ---------------------------------------------------------

@lru_cache(maxsize=4)
def _critic_weights(seed: int, dtype_name: str) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    layers = []
    c_in = 3
    for i, c_out in enumerate(CRITIC_CHANNELS):
        bound = math.sqrt(1.0 / (9 * c_in))
        rng = param_rng(seed, f"critic.{i}.w")
        w = rng.uniform(-bound, bound, size=(3, 3, c_in, c_out)).astype(dtype_name)
        b = np.zeros(c_out, dtype=dtype_name)
        w.setflags(write=False)
        b.setflags(write=False)
        layers.append((w, b))
        c_in = c_out
    return tuple(layers)


def critic_features(x, seed: int = CRITIC_SEED) -> list[Tensor]:
    """Three stride-2 conv + SiLU stages of the frozen critic net."""
    x, _ = nn._as4d(as_tensor(x))
    feats = []
    for w, b in _critic_weights(seed, np.dtype(x.dtype).name):
        x = T.silu(nn.conv2d(x, Tensor(w), Tensor(b), stride=2))
        feats.append(x)
    return feats


def perceptual_loss(out, gt, seed: int = CRITIC_SEED) -> Tensor:
    """Sum over stages 2 and 3 of the mean squared critic-feature difference."""
    out, gt = _pair(out, gt)
    fo = critic_features(out, seed)
    with no_grad():
        fg = critic_features(gt, seed)
    total = None
    for s in PERCEPTUAL_STAGES:
        d = fo[s] - fg[s].data
        term = T.mean(d * d)
        total = term if total is None else total + term
    return total


def contrastive_loss(out, gt, neg, seed: int = CRITIC_SEED) -> Tensor:
    """Per sample, sum over critic stages of |f(out)-f(gt)|_1 / (|f(out)-f(neg)|_1 + eps),
    averaged over the batch.

    Samples whose negative equals the target (well-exposed inputs) carry no
    contrast and are left out; if none remain the loss is zero.
    """
    out, gt = _pair(out, gt)
    neg = as_tensor(neg)
    if neg.shape != out.shape:
        raise ShapeMismatch(f"negative shape {neg.shape} != {out.shape}")
    x, _ = nn._as4d(out)
    g4 = gt.data.reshape(x.shape)
    n4 = neg.data.reshape(x.shape)
    keep = [i for i in range(x.shape[0]) if not np.array_equal(g4[i], n4[i])]
    if not keep:
        return Tensor(np.zeros((), dtype=x.dtype))
    if len(keep) < x.shape[0]:
        x = T.take(x, np.asarray(keep), axis=0)
        g4, n4 = g4[keep], n4[keep]
    fo = critic_features(x, seed)
    with no_grad():
        fg = critic_features(g4.astype(x.dtype), seed)
        fn = critic_features(n4.astype(x.dtype), seed)
    total = None
    for a, p, q in zip(fo, fg, fn):
        num = T.tsum(T.tabs(a - p.data), axis=(1, 2, 3))
        den = T.tsum(T.tabs(a - q.data), axis=(1, 2, 3)) + CONTRAST_EPS
        term = num / den
        total = term if total is None else total + term
    return T.mean(total)


def total_loss(out, gt, neg, weights: LossWeights | None = None) -> tuple[Tensor, dict[str, float]]:
    """Weighted objective and its separately reported components."""
    w = weights or LossWeights()
    parts = {
        "l1": l1_loss(out, gt),
        "ssim": ssim_loss(out, gt),
        "con": contrastive_loss(out, gt, neg),
        "per": perceptual_loss(out, gt),
    }
    total = (parts["l1"] * w.l1 + parts["ssim"] * w.ssim
             + parts["con"] * w.con + parts["per"] * w.per)
    report = {k: float(v.item()) for k, v in parts.items()}
    report["total"] = float(total.item())
    return total, report


# -- metrics -----------------------------------------------------------------

def psnr(out, gt) -> float:
    """10 log10(1 / MSE) on the unit range, capped at 99 dB."""
    a = np.asarray(getattr(out, "pixels", out), dtype=np.float64)
    b = np.asarray(getattr(gt, "pixels", gt), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def ssim_value(out, gt) -> float:
    a = np.asarray(getattr(out, "pixels", out), dtype=np.float64)
    b = np.asarray(getattr(gt, "pixels", gt), dtype=np.float64)
    with no_grad(), T.default_dtype(np.float64):
        return float(ssim(Tensor(a), Tensor(b)).item())
