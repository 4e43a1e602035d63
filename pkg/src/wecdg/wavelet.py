"""Orthonormal Haar 2-D DWT / IWT on channel-last images.

For each 2x2 block ``[a b; c d]``::

    cA = (a + b + c + d) / 2     cH = (a - b + c - d) / 2
    cV = (a + b - c - d) / 2     cD = (a - b - c + d) / 2

The analysis matrix is orthogonal, so the inverse is its transpose and the
backward pass of each transform is the other transform.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import OddDimensions, ShapeMismatch
from .tensor import Tensor, as_tensor, make_op

FILTERS = ("haar",)


class WaveletSubbands(NamedTuple):
    c_A: Tensor
    c_H: Tensor
    c_V: Tensor
    c_D: Tensor

    @property
    def shape(self):
        return self.c_A.shape

    def high(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.c_H, self.c_V, self.c_D


def _analysis(x: np.ndarray) -> tuple[np.ndarray, ...]:
    a = x[..., 0::2, 0::2, :]
    b = x[..., 0::2, 1::2, :]
    c = x[..., 1::2, 0::2, :]
    d = x[..., 1::2, 1::2, :]
    return ((a + b + c + d) * 0.5, (a - b + c - d) * 0.5,
            (a + b - c - d) * 0.5, (a - b - c + d) * 0.5)


def _synthesis(ca, ch, cv, cd) -> np.ndarray:
    *lead, h, w, c = ca.shape
    out = np.empty((*lead, 2 * h, 2 * w, c), dtype=np.result_type(ca, ch, cv, cd))
    out[..., 0::2, 0::2, :] = (ca + ch + cv + cd) * 0.5
    out[..., 0::2, 1::2, :] = (ca - ch + cv - cd) * 0.5
    out[..., 1::2, 0::2, :] = (ca + ch - cv - cd) * 0.5
    out[..., 1::2, 1::2, :] = (ca - ch - cv + cd) * 0.5
    return out


def dwt2(img, wavelet: str = "haar") -> WaveletSubbands:
    """One analysis level over the two axes preceding the channel axis."""
    if wavelet not in FILTERS:
        raise ValueError(f"unsupported wavelet {wavelet!r}")
    img = as_tensor(img)
    if img.ndim < 3:
        raise ShapeMismatch(f"expected [..., H, W, C], got {img.shape}")
    h, w = img.shape[-3], img.shape[-2]
    if h % 2 or w % 2:
        raise OddDimensions(f"dwt2 needs even H and W, got {h}x{w}")
    bands = _analysis(img.data)
    # one node holds all four outputs; each subband tensor pulls its slice
    stacked = make_op(np.stack(bands), (img,),
                      lambda g: (_synthesis(g[0], g[1], g[2], g[3]),))
    return WaveletSubbands(*(_pick(stacked, i) for i in range(4)))


def _pick(stacked: Tensor, i: int) -> Tensor:
    shape, dtype = stacked.shape, stacked.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[i] = g
        return (full,)

    return make_op(stacked.data[i], (stacked,), bw)


def iwt2(sb) -> Tensor:
    """Exact inverse of :func:`dwt2`."""
    ca, ch, cv, cd = (as_tensor(t) for t in sb)
    if not (ca.shape == ch.shape == cv.shape == cd.shape):
        raise ShapeMismatch(
            f"subband shapes differ: {ca.shape}, {ch.shape}, {cv.shape}, {cd.shape}")

    def bw(g):
        return _analysis(g)

    return make_op(_synthesis(ca.data, ch.data, cv.data, cd.data), (ca, ch, cv, cd), bw)


def wavedec2(img, levels: int) -> list[WaveletSubbands]:
    """Multi-level decomposition by recursion on c_A; element 0 is level 1."""
    out = []
    current = as_tensor(img)
    for _ in range(levels):
        sb = dwt2(current)
        out.append(sb)
        current = sb.c_A
    return out


def waverec2(levels: list[WaveletSubbands]) -> Tensor:
    current = levels[-1].c_A
    for sb in reversed(levels):
        current = iwt2((current, sb.c_H, sb.c_V, sb.c_D))
    return current


def swap_subbands(a, b, which: str, clamp: bool = True):
    """Exchange low- (``"lf"``) or high-frequency (``"hf"``) content of two images.

    Returns the two reconstructions, clipped to [0, 1] unless ``clamp`` is
    False (the pre-clamp form is what the luminance invariants are about).
    """
    a_arr = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    b_arr = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if a_arr.shape != b_arr.shape:
        raise ShapeMismatch(f"swap needs equal shapes, got {a_arr.shape} and {b_arr.shape}")
    which = which.lower()
    if which not in ("lf", "hf"):
        raise ValueError(f"which must be 'lf' or 'hf', got {which!r}")
    h, w = a_arr.shape[-3], a_arr.shape[-2]
    if h % 2 or w % 2:
        raise OddDimensions(f"swap needs even H and W, got {h}x{w}")
    sa = _analysis(a_arr)
    sb = _analysis(b_arr)
    if which == "lf":
        out_a = _synthesis(sb[0], *sa[1:])
        out_b = _synthesis(sa[0], *sb[1:])
    else:
        out_a = _synthesis(sa[0], *sb[1:])
        out_b = _synthesis(sb[0], *sa[1:])
    if clamp:
        out_a = np.clip(out_a, 0.0, 1.0)
        out_b = np.clip(out_b, 0.0, 1.0)
    return out_a, out_b
