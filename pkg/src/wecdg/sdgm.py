"""Scene description generation: degradation descriptors and image matching.

Manual mode turns a label into a descriptor: a base word vector (seeded
orthogonal table, or an embedding file) refined by a d -> 2d -> d MLP.
Automatic mode encodes an image with a small CNN and picks the descriptor
with the highest scaled cosine similarity; the softmax over those scores is
also the training target of a cross-entropy objective.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .errors import (EmptyDataset, EmptyDescriptorSet, EmptyImage, TrainingDiverged,
                     UnknownLabel, ZeroVector)
from .params import Adam, ParameterTree, ParamView
from .tensor import Tensor, as_tensor, no_grad

log = logging.getLogger(__name__)

BASE_LABELS = ("underexposed", "well-exposed", "overexposed")

# dataset exposure tags -> descriptor labels
_LABEL_ALIASES = {
    "underexposed": "underexposed", "under": "underexposed", "N1.5": "underexposed",
    "well-exposed": "well-exposed", "well": "well-exposed", "GT": "well-exposed", "0": "well-exposed",
    "overexposed": "overexposed", "over": "overexposed", "P1.5": "overexposed",
}
_MIX_TAGS = {"N1": "underexposed", "P1": "overexposed"}
_MIX_RE = re.compile(r"^mix\(\s*([\w.-]+)\s*,\s*([\w.-]+)\s*,\s*([0-9.eE+-]+)\s*\)$")

ENCODER_CHANNELS = (16, 32, 64, 64)


@dataclass
class SDGMConfig:
    dim: int = 50
    delta: float = 10.0
    mix_weight: float = 0.5
    seed: int = 0
    embedding_file: str | None = None


@dataclass(frozen=True)
class Label:
    """A base class, or ``mix(a, b, w)`` meaning ``w*e_a + (1-w)*e_b``."""

    a: str
    b: str | None = None
    w: float = 1.0

    def __str__(self):
        if self.b is None:
            return self.a
        return f"mix({self.a},{self.b},{self.w:g})"

    @property
    def is_mix(self) -> bool:
        return self.b is not None


def parse_label(text: str, mix_weight: float = 0.5) -> Label:
    """Resolve a base label, dataset tag (N1.5, P1, GT, under, ...) or mix expression."""
    text = str(text).strip()
    if text in _LABEL_ALIASES:
        return Label(_LABEL_ALIASES[text])
    if text in _MIX_TAGS:
        return Label(_MIX_TAGS[text], "well-exposed", mix_weight)
    m = _MIX_RE.match(text)
    if m:
        a, b, w = m.group(1), m.group(2), float(m.group(3))
        if a not in _LABEL_ALIASES or b not in _LABEL_ALIASES:
            raise UnknownLabel(f"unknown label in {text!r}")
        if not 0.0 <= w <= 1.0:
            raise UnknownLabel(f"mix weight must be in [0, 1], got {w}")
        return Label(_LABEL_ALIASES[a], _LABEL_ALIASES[b], w)
    raise UnknownLabel(f"unknown exposure label {text!r}")


@dataclass
class DegradationDescriptor:
    label: str
    embedding: np.ndarray
    source: str = "manual"

    def __post_init__(self):
        if not np.linalg.norm(self.embedding) > 0:
            raise ZeroVector("descriptor embedding has zero norm")


@dataclass
class VisualEmbedding:
    embedding: np.ndarray


def load_embedding_file(path, dim: int) -> dict[str, np.ndarray]:
    """Plain text, one ``token v1 ... v_dim`` per line."""
    table = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != dim + 1:
            raise ValueError(f"{path}: expected {dim} values for {parts[0]!r}, got {len(parts) - 1}")
        table[parts[0]] = np.array([float(v) for v in parts[1:]])
    return table


def base_table(cfg: SDGMConfig) -> np.ndarray:
    """[3, dim] base word vectors, rows orthonormal (seeded) unless a file overrides."""
    if cfg.embedding_file:
        table = load_embedding_file(cfg.embedding_file, cfg.dim)
        missing = [lb for lb in BASE_LABELS if lb not in table]
        if missing:
            raise UnknownLabel(f"embedding file lacks {missing}")
        return np.stack([table[lb] for lb in BASE_LABELS])
    rng = np.random.default_rng([cfg.seed, 0x5D6])
    q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, len(BASE_LABELS))))
    return q.T.copy()


def init_sdgm(tree: ParameterTree, cfg: SDGMConfig, prefix: str = "sdgm") -> ParamView:
    p = tree.sub(prefix)
    d = cfg.dim
    nn.init_linear(p, "text.fc1", d, 2 * d)
    nn.init_linear(p, "text.fc2", 2 * d, d)
    c_in = 3
    for i, c in enumerate(ENCODER_CHANNELS):
        nn.init_conv(p, f"enc.conv{i}", c_in, c)
        c_in = c
    nn.init_linear(p, "enc.fc1", c_in, c_in)
    nn.init_linear(p, "enc.fc2", c_in, d)
    return p


class SDGM:
    """Parameters plus the fixed base-vector table."""

    def __init__(self, cfg: SDGMConfig | None = None, tree: ParameterTree | None = None,
                 prefix: str = "sdgm", table: np.ndarray | None = None):
        self.cfg = cfg or SDGMConfig()
        self.tree = tree if tree is not None else ParameterTree(self.cfg.seed)
        self.prefix = prefix
        if f"{prefix}.text.fc1.w" not in self.tree:
            init_sdgm(self.tree, self.cfg, prefix)
        self.p = self.tree.sub(prefix)
        self.table = base_table(self.cfg) if table is None else np.array(table, dtype=np.float64)
        if self.table.shape != (len(BASE_LABELS), self.cfg.dim):
            raise ValueError(f"base table shape {self.table.shape} != {(len(BASE_LABELS), self.cfg.dim)}")

    # -- text side -------------------------------------------------------
    def refined_base(self) -> Tensor:
        """[3, d] MLP-refined base vectors (differentiable)."""
        h = T.silu(nn.apply_linear(self.p, "text.fc1", Tensor(self.table)))
        return nn.apply_linear(self.p, "text.fc2", h)

    def embed_text(self, label) -> DegradationDescriptor:
        lab = label if isinstance(label, Label) else parse_label(label, self.cfg.mix_weight)
        with no_grad():
            base = self.refined_base().data
        e = self._combine(base, lab)
        return DegradationDescriptor(str(lab), e, "manual")

    def _combine(self, base: np.ndarray, lab: Label) -> np.ndarray:
        e_a = base[BASE_LABELS.index(lab.a)]
        if not lab.is_mix:
            return e_a.copy()
        e_b = base[BASE_LABELS.index(lab.b)]
        return lab.w * e_a + (1.0 - lab.w) * e_b

    def base_descriptors(self) -> list[DegradationDescriptor]:
        with no_grad():
            base = self.refined_base().data
        return [DegradationDescriptor(lb, base[i].copy(), "auto") for i, lb in enumerate(BASE_LABELS)]

    # -- image side ------------------------------------------------------
    def encode(self, images) -> Tensor:
        """[B, H, W, 3] -> [B, d] visual embeddings (differentiable)."""
        x = as_tensor(images)
        if x.ndim == 3:
            x = T.reshape(x, (1, *x.shape))
        if x.size == 0 or x.shape[1] == 0 or x.shape[2] == 0:
            raise EmptyImage("cannot embed an empty image")
        for i in range(len(ENCODER_CHANNELS)):
            x = T.silu(nn.apply_conv(self.p, f"enc.conv{i}", x, stride=2))
        pooled = T.mean(x, axis=(1, 2))
        h = T.silu(nn.apply_linear(self.p, "enc.fc1", pooled))
        return nn.apply_linear(self.p, "enc.fc2", h)

    def embed_image(self, img) -> VisualEmbedding:
        pixels = np.asarray(getattr(img, "pixels", img), dtype=T.get_default_dtype())
        with no_grad():
            e = self.encode(pixels).data[0]
        if not np.linalg.norm(e) > 0:
            raise ZeroVector("visual embedding has zero norm")
        return VisualEmbedding(e)

    def classify(self, img) -> tuple[DegradationDescriptor, np.ndarray]:
        return match(self.embed_image(img), self.base_descriptors(), self.cfg.delta)

    def logits(self, images) -> Tensor:
        """[B, 3] scaled cosine scores against the refined base vectors."""
        ev = nn.l2_normalize(self.encode(images))
        et = nn.l2_normalize(self.refined_base())
        return T.matmul(ev, T.swapaxes(et, 0, 1)) * self.cfg.delta


def _vec(v) -> np.ndarray:
    return np.asarray(getattr(v, "embedding", v), dtype=np.float64).reshape(-1)


def cosine_score(e_v, e_t, delta: float = 10.0) -> float:
    """delta * <e_v, e_t> / (|e_v| |e_t|)."""
    a, b = _vec(e_v), _vec(e_t)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine score of a zero vector")
    return float(delta * np.dot(a, b) / (na * nb))


def match(e_v, descriptors: Sequence[DegradationDescriptor], delta: float = 10.0):
    """Best descriptor and the softmax distribution over scaled cosine scores.

    Ties resolve to the earliest descriptor in ``descriptors``.
    """
    if len(descriptors) == 0:
        raise EmptyDescriptorSet("match needs at least one descriptor")
    scores = np.array([cosine_score(e_v, d, delta) for d in descriptors])
    z = np.exp(scores - scores.max())
    probs = z / z.sum()
    best = int(np.argmax(scores))
    chosen = descriptors[best]
    return DegradationDescriptor(chosen.label, chosen.embedding, "auto"), probs


# -- training ---------------------------------------------------------------

@dataclass
class SDGMTrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 8
    seed: int = 0


FULL_SCALE_TRAIN_DEFAULTS = {"lr": 1e-4, "epochs": 100, "batch": 128}


def label_index(label) -> int:
    lab = label if isinstance(label, Label) else parse_label(label)
    if lab.is_mix:
        # mixed tags train toward their dominant class
        return BASE_LABELS.index(lab.a if lab.w >= 0.5 else lab.b)
    return BASE_LABELS.index(lab.a)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    lp = T.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = 1.0
    return -(lp * Tensor(onehot)).sum() * (1.0 / len(targets))


def train_sdgm(model: SDGM, images: np.ndarray, targets: Sequence[int],
               epochs: int = 30, lr: float = 1e-3, batch: int = 8, seed: int = 0,
               on_epoch=None) -> ParameterTree:
    """Minimise cross-entropy of the match distribution against class indices.

    ``images`` is ``[n, H, W, 3]``; returns the (updated) parameter tree.
    """
    targets = np.asarray(targets, dtype=np.intp)
    if len(targets) == 0:
        raise EmptyDataset("SDGM training set is empty")
    sub = ParameterTree(model.tree.seed, model.tree.dtype)
    sub.entries = {n: t for n, t in model.tree.items() if n.startswith(model.prefix + ".")}
    opt = Adam(sub, lr=lr)
    rng = np.random.default_rng([seed, 0x5D61])
    n = len(targets)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            sub.zero_grad()
            loss = cross_entropy(model.logits(images[idx]), targets[idx])
            T.backward(loss)
            for t in sub.entries.values():
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
            opt.step()
            losses.append(loss.item())
        mean_loss = float(np.mean(losses))
        if not math.isfinite(mean_loss):
            raise TrainingDiverged(f"SDGM loss is {mean_loss} at epoch {epoch}")
        log.debug("sdgm epoch=%d loss=%.6f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return model.tree


def accuracy(model: SDGM, images: np.ndarray, targets: Sequence[int], batch: int = 32) -> float:
    correct = 0
    with no_grad():
        for start in range(0, len(targets), batch):
            pred = np.argmax(model.logits(images[start:start + batch]).data, axis=1)
            correct += int((pred == np.asarray(targets[start:start + batch])).sum())
    return correct / len(targets)
