"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"WECDGCKP"
    offset 8   u32       format version (currently 1)
    offset 12  u64       header length N in bytes
    offset 20  N bytes   UTF-8 JSON header (sorted keys, no whitespace)
    offset 20+N          data section: float64 little-endian arrays, back to back

The header holds ``format_version``, ``seed``, ``model_config``,
``sdgm_config``, an optional ``train_config`` and ``entries``, a list of
``{"name", "shape", "offset", "count"}`` where ``offset`` is the byte offset
of the array inside the data section. Arrays are stored in C order.
Restoration weights are named ``model.<param>``, descriptor-module weights
``sdgm.<param>`` and the fixed base word table ``sdgm_table``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CorruptFile, IoError, UnsupportedFormat
from .model import WECDG, ModelConfig
from .params import ParameterTree
from .sdgm import SDGM, SDGMConfig

MAGIC = b"WECDGCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _arrays(model: WECDG) -> list[tuple[str, np.ndarray]]:
    out = [(f"model.{n}", t.data) for n, t in model.tree.items()]
    out += [(n, t.data) for n, t in model.sdgm.tree.items()]
    out.append(("sdgm_table", model.sdgm.table))
    return out


def encode_checkpoint(model: WECDG, train_config: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in _arrays(model):
        data = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "count": int(data.size)})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "seed": model.cfg.seed,
        "model_config": model.cfg.to_dict(),
        "sdgm_config": asdict(model.sdgm.cfg),
        "train_config": train_config,
        "entries": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(model: WECDG, path, train_config: dict | None = None) -> None:
    path = Path(path)
    blob = encode_checkpoint(model, train_config)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a container into ``(header, {name: float64 array})``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CorruptFile(f"{path}: too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedFormat(f"{path}: checkpoint format {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if start > len(raw):
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header ({exc})") from exc
    arrays = {}
    for e in header["entries"]:
        lo = start + e["offset"]
        hi = lo + 8 * e["count"]
        if hi > len(raw):
            raise CorruptFile(f"{path}: data for {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(raw[lo:hi], dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return header, arrays


def load_checkpoint(path) -> tuple[WECDG, dict]:
    """Rebuild the model from a container; returns ``(model, header)``."""
    header, arrays = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(header["model_config"])
        scfg = SDGMConfig(**header["sdgm_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFile(f"{path}: bad config in header ({exc})") from exc
    scfg.embedding_file = None      # the table itself is stored
    model = WECDG(cfg, sdgm=SDGM(scfg, ParameterTree(scfg.seed, cfg.dtype), table=arrays.pop("sdgm_table")))
    model.tree.load_state_dict({n[len("model."):]: a for n, a in arrays.items() if n.startswith("model.")})
    model.sdgm.tree.load_state_dict({n: a for n, a in arrays.items() if n.startswith("sdgm.")})
    return model, header
