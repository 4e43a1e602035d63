"""8-bit PNG / binary PPM reading and writing.

Pixels load as ``byte / 255`` into ``[H, W, 3]`` float arrays and save with
round-half-up (``floor(v * 255 + 0.5)``), so ``save(load(f))`` reproduces the
pixel bytes of any 8-bit file this module wrote.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptFile, EmptyImage, IoError, UnsupportedFormat

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass
class ImageBuffer:
    pixels: np.ndarray
    source: str | None = None
    original_size: tuple[int, int] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[-1] != 3:
            raise ValueError(f"expected [H, W, 3] pixels, got {self.pixels.shape}")
        if self.pixels.size == 0:
            raise EmptyImage("image has no pixels")
        if self.original_size is None:
            self.original_size = self.pixels.shape[:2]
        if np.any(self.pixels < 0) or np.any(self.pixels > 1):
            raise ValueError("pixels must lie in [0, 1]")

    @property
    def shape(self):
        return self.pixels.shape


def _check_png_header(raw: bytes, path) -> None:
    if len(raw) < 33 or raw[12:16] != b"IHDR":
        raise CorruptFile(f"{path}: truncated PNG header")
    bit_depth, color_type = raw[24], raw[25]
    if bit_depth != 8:
        raise UnsupportedFormat(f"{path}: {bit_depth}-bit PNG (only 8-bit supported)")
    if color_type not in (0, 2, 3, 4, 6):
        raise CorruptFile(f"{path}: invalid PNG color type {color_type}")


def _check_ppm_header(raw: bytes, path) -> None:
    tokens = []
    pos = 2
    while len(tokens) < 3 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 3:
        raise CorruptFile(f"{path}: truncated PPM header")
    try:
        maxval = int(tokens[2])
    except ValueError as exc:
        raise CorruptFile(f"{path}: bad PPM maxval") from exc
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: PPM maxval {maxval} (only 255 supported)")


def load_image(path) -> ImageBuffer:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if raw.startswith(PNG_SIGNATURE):
        _check_png_header(raw, path)
    elif raw[:2] == b"P6":
        _check_ppm_header(raw, path)
    else:
        raise UnsupportedFormat(f"{path}: not an 8-bit PNG or binary PPM")
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            if im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return ImageBuffer(arr.astype(np.float64) / 255.0, source=str(path))


def to_bytes(pixels) -> np.ndarray:
    pixels = np.asarray(getattr(pixels, "pixels", pixels), dtype=np.float64)
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write PNG or PPM, chosen by suffix (``.png``, ``.ppm``)."""
    path = Path(path)
    data = to_bytes(img)
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=-1)
    suffix = path.suffix.lower()
    if suffix not in (".png", ".ppm"):
        raise UnsupportedFormat(f"{path}: unsupported output format {suffix!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if suffix == ".png":
            Image.fromarray(data, "RGB").save(path, format="PNG", optimize=False, compress_level=6)
        else:
            h, w, _ = data.shape
            path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
