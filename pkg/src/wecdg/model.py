"""Full restoration network: stem, front ECAM, U-shaped encoder/decoder with a
stack of EDRM blocks at the bottleneck, back ECAM and an RGB head.

The head output is added to the (reflect-padded) input and clamped to [0, 1],
then cropped back to the caller's size, so any H, W >= 8 round-trips.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import ecam, edrm, nn
from . import tensor as T
from .errors import EmptyImage
from .imageio import ImageBuffer
from .params import ParameterTree
from .sdgm import SDGM, DegradationDescriptor, SDGMConfig
from .tensor import Tensor, as_tensor, no_grad


@dataclass
class ModelConfig:
    base_channels: int = 16
    unet_levels: int = 2
    edrm_count: int = 4
    descriptor_dim: int = 50
    query_tokens: int = 4
    token_budget: int = 1024
    gffn_expansion: float = 2.0
    ss2d_expansion: float = 2.0
    state_dim: int = 4
    seed: int = 0
    precision: str = "f64"

    def __post_init__(self):
        if self.edrm_count < 1:
            raise ValueError("edrm_count must be >= 1")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.unet_levels < 0:
            raise ValueError("unet_levels must be >= 0")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def multiple(self) -> int:
        """Padded sizes are multiples of this, so the bottleneck stays even."""
        return 2 ** (self.unet_levels + 1)

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def init_model(cfg: ModelConfig) -> ParameterTree:
    tree = ParameterTree(cfg.seed, cfg.dtype)
    p = tree.sub("")
    c0 = cfg.base_channels
    nn.init_conv(p, "stem", 3, c0)
    ecam.init_ecam(p.sub("ecam_front"), c0, cfg.descriptor_dim, cfg.query_tokens, cfg.gffn_expansion)
    for i in range(cfg.unet_levels):
        nn.init_conv(p, f"enc.{i}", cfg.channels(i), cfg.channels(i + 1))
    cb = cfg.channels(cfg.unet_levels)
    for k in range(cfg.edrm_count):
        edrm.init_edrm(p.sub(f"edrm.{k}"), cb, cfg.ss2d_expansion, cfg.state_dim, cfg.gffn_expansion)
    for i in reversed(range(cfg.unet_levels)):
        nn.init_conv(p, f"dec.{i}", cfg.channels(i + 1) + cfg.channels(i), cfg.channels(i))
    ecam.init_ecam(p.sub("ecam_back"), c0, cfg.descriptor_dim, cfg.query_tokens, cfg.gffn_expansion)
    nn.init_conv(p, "head", c0, 3)
    return tree


def pad_amounts(h: int, w: int, multiple: int) -> tuple[int, int]:
    return (-h) % multiple, (-w) % multiple


def network(x: Tensor, e_t, tree: ParameterTree, cfg: ModelConfig, clamp: bool = True) -> Tensor:
    """``[B, H, W, 3]`` in [0, 1] -> corrected ``[B, H, W, 3]``; differentiable."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = T.reshape(x, (1, *x.shape))
    bsz, h, w, _ = x.shape
    if bsz == 0 or h == 0 or w == 0:
        raise EmptyImage("cannot correct an empty image")
    p = tree.sub("")
    ph, pw = pad_amounts(h, w, cfg.multiple)
    xp = nn.reflect_pad(x, ph, pw)
    budget = cfg.token_budget

    f = nn.apply_conv(p, "stem", xp)
    f = ecam.ecam_forward(f, e_t, p.sub("ecam_front"), budget)
    skips = []
    for i in range(cfg.unet_levels):
        skips.append(f)
        f = T.silu(nn.apply_conv(p, f"enc.{i}", f, stride=2))
    for k in range(cfg.edrm_count):
        f = edrm.edrm_forward(f, p.sub(f"edrm.{k}"), budget)
    for i in reversed(range(cfg.unet_levels)):
        f = T.concat([nn.upsample2x(f), skips[i]], axis=-1)
        f = T.silu(nn.apply_conv(p, f"dec.{i}", f))
    f = ecam.ecam_forward(f, e_t, p.sub("ecam_back"), budget)
    out = xp + nn.apply_conv(p, "head", f)
    if clamp:
        out = T.clamp(out, 0.0, 1.0)
    if ph or pw:
        out = out[:, :h, :w, :]
    return out


def zero_output_projections(tree: ParameterTree, cfg: ModelConfig) -> None:
    """Test configuration: every residual branch and the head contribute zero."""
    p = tree.sub("")
    ecam.zero_output_projections(p.sub("ecam_front"))
    ecam.zero_output_projections(p.sub("ecam_back"))
    for k in range(cfg.edrm_count):
        edrm.zero_output_projections(p.sub(f"edrm.{k}"))
    for suffix in ("head.w", "head.b"):
        tree[suffix].data = np.zeros_like(tree[suffix].data)


def param_report(tree: ParameterTree) -> dict[str, int]:
    """Parameter counts by top-level group, plus ``total``."""
    groups: dict[str, int] = {}
    for name, t in tree.items():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] in ("enc", "dec", "edrm") else parts[0]
        groups[key] = groups.get(key, 0) + t.size
    groups["total"] = tree.num_params()
    return groups


class WECDG:
    """Restoration network plus the descriptor module that conditions it."""

    def __init__(self, cfg: ModelConfig | None = None, sdgm_cfg: SDGMConfig | None = None,
                 tree: ParameterTree | None = None, sdgm: SDGM | None = None):
        self.cfg = cfg or ModelConfig()
        with T.default_dtype(self.cfg.dtype):
            self.tree = tree if tree is not None else init_model(self.cfg)
            if sdgm is None:
                sdgm_cfg = sdgm_cfg or SDGMConfig(dim=self.cfg.descriptor_dim, seed=self.cfg.seed)
                sdgm = SDGM(sdgm_cfg, ParameterTree(sdgm_cfg.seed, self.cfg.dtype))
        if sdgm.cfg.dim != self.cfg.descriptor_dim:
            raise ValueError("SDGM dim and model descriptor_dim differ")
        self.sdgm = sdgm

    def __call__(self, x, e_t, clamp: bool = True) -> Tensor:
        with T.default_dtype(self.cfg.dtype):
            return network(x, e_t, self.tree, self.cfg, clamp)

    def descriptor(self, label) -> DegradationDescriptor:
        with T.default_dtype(self.cfg.dtype):
            return self.sdgm.embed_text(label)

    def forward(self, img, descriptor: DegradationDescriptor) -> ImageBuffer:
        pixels = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
        with no_grad(), T.default_dtype(self.cfg.dtype):
            x = Tensor(pixels[None])
            out = network(x, np.asarray(descriptor.embedding)[None], self.tree, self.cfg).data[0]
        src = getattr(img, "source", None)
        return ImageBuffer(np.clip(out.astype(np.float64), 0.0, 1.0), source=src,
                           meta={"descriptor": descriptor.label, "mode": descriptor.source})

    def correct_manual(self, img, label) -> ImageBuffer:
        return self.forward(img, self.descriptor(label))

    def correct_auto(self, img):
        with T.default_dtype(self.cfg.dtype):
            desc, probs = self.sdgm.classify(img)
        return self.forward(img, desc), desc, probs

    def num_params(self) -> int:
        return self.tree.num_params()

