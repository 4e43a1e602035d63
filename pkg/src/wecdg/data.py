"""Synthetic exposure dataset, JSON manifests and crop/rotate augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, EmptyDataset, ImageTooSmall, IoError, UnknownLabel
from .imageio import ImageBuffer, load_image, save_image, to_bytes
from .sdgm import parse_label

MANIFEST_LABELS = ("N1.5", "N1", "0", "P1", "P1.5", "under", "over", "GT")
SYNTH_SIZE = 64
UNDER_GAMMA = (1.8, 3.0)
UNDER_GAIN = (0.5, 0.9)
OVER_GAMMA = (0.3, 0.6)
OVER_GAIN = (1.1, 1.6)


@dataclass
class ManifestEntry:
    input_path: str
    gt_path: str
    exposure_label: str

    def __post_init__(self):
        if self.exposure_label not in MANIFEST_LABELS:
            raise UnknownLabel(f"manifest label {self.exposure_label!r} not in {MANIFEST_LABELS}")

    @property
    def descriptor_label(self) -> str:
        return str(parse_label(self.exposure_label))


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.entries)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def to_dict(self) -> dict:
        return {"entries": [vars(e).copy() for e in self.entries]}

    def filter(self, labels) -> "DatasetManifest":
        keep = set(labels)
        return DatasetManifest([e for e in self.entries if e.exposure_label in keep], self.root)

    def load_pairs(self) -> tuple[list[ImageBuffer], list[ImageBuffer]]:
        if not self.entries:
            raise EmptyDataset("manifest has no entries")
        cache: dict[Path, ImageBuffer] = {}

        def get(rel):
            p = self.resolve(rel)
            if p not in cache:
                cache[p] = load_image(p)
            return cache[p]

        return [get(e.input_path) for e in self.entries], [get(e.gt_path) for e in self.entries]


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc


def read_manifest(path, check_paths: bool = True) -> DatasetManifest:
    """Read a manifest; relative image paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: invalid JSON ({exc})") from exc
    try:
        entries = [ManifestEntry(e["input_path"], e["gt_path"], e["exposure_label"])
                   for e in raw["entries"]]
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: malformed manifest ({exc})") from exc
    manifest = DatasetManifest(entries, path.parent)
    if check_paths:
        for e in entries:
            for rel in (e.input_path, e.gt_path):
                if not manifest.resolve(rel).is_file():
                    raise IoError(f"{path}: missing image {rel}")
    return manifest


# -- synthetic images --------------------------------------------------------

def procedural_image(rng: np.random.Generator, size: int = SYNTH_SIZE) -> np.ndarray:
    """Smooth two-colour gradient, a few flat shapes and mild texture, in (0, 1)."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    img = c0 + (c1 - c0) * t[..., None]
    for _ in range(rng.integers(2, 5)):
        colour = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        r = rng.uniform(0.08, 0.25)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.5, 1.5))
        img[mask] = colour
    freq = rng.uniform(4, 12)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    texture = 0.04 * np.sin(2 * np.pi * freq * xx + phase[0]) * np.cos(2 * np.pi * freq * yy + phase[1])
    img = img + texture[..., None] + rng.normal(0, 0.015, size=img.shape)
    return np.clip(img, 0.02, 0.98)


def degrade(gt: np.ndarray, gamma: float, gain: float) -> np.ndarray:
    return np.clip(gain * np.power(gt, gamma), 0.0, 1.0)


def synth_triple(rng: np.random.Generator, size: int = SYNTH_SIZE):
    """(gt, under, over) as 8-bit-quantised float images plus the draw parameters."""
    gt = to_bytes(procedural_image(rng, size)) / 255.0
    gu, ku = rng.uniform(*UNDER_GAMMA), rng.uniform(*UNDER_GAIN)
    go, ko = rng.uniform(*OVER_GAMMA), rng.uniform(*OVER_GAIN)
    under = to_bytes(degrade(gt, gu, ku)) / 255.0
    over = to_bytes(degrade(gt, go, ko)) / 255.0
    params = {"under_gamma": gu, "under_gain": ku, "over_gamma": go, "over_gain": ko}
    return gt, under, over, params


def synth_dataset(out_dir, count: int, seed: int = 0, size: int = SYNTH_SIZE) -> DatasetManifest:
    """Write ``count`` GT images with under/over variants and ``manifest.json``.

    Every triple satisfies mean(under) < mean(gt) < mean(over); a violation
    is a generator bug and raises.
    """
    if count < 1:
        raise EmptyDataset("synth_dataset needs count >= 1")
    out = Path(out_dir)
    entries = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        gt, under, over, _ = synth_triple(rng, size)
        if not under.mean() < gt.mean() < over.mean():
            raise AssertionError(f"triple {i}: exposure means out of order")
        name = f"{i:04d}.png"
        for sub, img in (("gt", gt), ("under", under), ("over", over)):
            save_image(img, out / sub / name)
        g = f"gt/{name}"
        entries += [ManifestEntry(f"under/{name}", g, "under"),
                    ManifestEntry(g, g, "GT"),
                    ManifestEntry(f"over/{name}", g, "over")]
    manifest = DatasetManifest(entries, out)
    write_manifest(manifest, out / "manifest.json")
    return manifest


# -- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    top: int
    left: int
    k: int          # quarter turns, counter-clockwise
    flip: bool      # horizontal flip applied after the rotation


def grid_positions(n: int, crop: int, stride: int) -> list[int]:
    if n < crop:
        raise ImageTooSmall(f"image side {n} is smaller than crop {crop}")
    return list(range(0, n - crop + 1, stride))


def apply_dihedral(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    y = np.rot90(x, k % 4, axes=(0, 1))
    if flip:
        y = y[:, ::-1]
    return np.ascontiguousarray(y)


def invert_dihedral(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    y = x[:, ::-1] if flip else x
    return np.ascontiguousarray(np.rot90(y, -(k % 4), axes=(0, 1)))


def sample_transform(shape, crop: int, stride: int, rng: np.random.Generator,
                     hflip: bool = True) -> Transform:
    h, w = shape[0], shape[1]
    tops, lefts = grid_positions(h, crop, stride), grid_positions(w, crop, stride)
    top = tops[rng.integers(len(tops))]
    left = lefts[rng.integers(len(lefts))]
    k = int(rng.integers(4))
    flip = bool(rng.integers(2)) if hflip else False
    return Transform(int(top), int(left), k, flip)


def crop_and_augment(img, gt, cfg, rng: np.random.Generator):
    """Same stride-grid crop and dihedral transform applied to input and target.

    ``cfg`` needs ``crop_size``, ``stride`` and ``hflip`` attributes.
    """
    a = np.asarray(getattr(img, "pixels", img))
    b = np.asarray(getattr(gt, "pixels", gt))
    if a.shape != b.shape:
        raise ValueError(f"input {a.shape} and target {b.shape} differ")
    c = cfg.crop_size
    tf = sample_transform(a.shape, c, cfg.stride, rng, getattr(cfg, "hflip", True))
    window = (slice(tf.top, tf.top + c), slice(tf.left, tf.left + c))
    return apply_dihedral(a[window], tf.k, tf.flip), apply_dihedral(b[window], tf.k, tf.flip)
