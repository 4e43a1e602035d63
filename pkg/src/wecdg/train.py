"""Training and evaluation harness.

Training runs in two phases. The descriptor module is fitted first as an
exposure classifier. The restoration network is then trained with
teacher-forced descriptors: each sample's ground-truth exposure tag is
embedded in manual mode. Progress is emitted as ``key=value`` records.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import tensor as T
from .data import DatasetManifest, crop_and_augment
from .errors import EmptyDataset, TrainingDiverged
from .losses import LossWeights, psnr, ssim_value, total_loss
from .model import WECDG, ModelConfig
from .params import Adam
from .sdgm import BASE_LABELS, SDGMConfig, accuracy, label_index, train_sdgm
from .tensor import Tensor

FULL_SCALE_CROP = {"crop_size": 512, "stride": 200}
# reference scores of the full-scale model on SICE; printed for context only
REFERENCE_SCORES = {"dataset": "SICE", "psnr": 23.31, "ssim": 0.7286}
LOSS_WINDOW = 50


@dataclass
class TrainConfig:
    crop_size: int = 64
    stride: int = 32
    steps: int = 2000
    lr: float = 1e-3
    batch: int = 4
    seed: int = 0
    hflip: bool = True
    precision: str | None = "f32"
    log_every: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    sdgm_epochs: int = 30
    sdgm_lr: float = 1e-3
    sdgm_batch: int = 8

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.crop_size < 2 or self.crop_size % 2:
            raise ValueError("crop_size must be even and >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps must be >= 0 and batch >= 1")
        if self.precision not in (None, "f32", "f64"):
            raise ValueError(f"precision must be f32, f64 or null, got {self.precision!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: WECDG
    history: list[dict]
    sdgm_history: list[dict]

    def loss_windows(self, window: int = LOSS_WINDOW) -> tuple[float, float]:
        """Mean total loss over the first and the last ``window`` steps."""
        totals = [h["total"] for h in self.history]
        if not totals:
            return math.nan, math.nan
        w = min(window, len(totals))
        return float(np.mean(totals[:w])), float(np.mean(totals[-w:]))


def format_record(rec: dict) -> str:
    parts = []
    for k, v in rec.items():
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts)


def _stack(images) -> np.ndarray:
    return np.stack([np.asarray(getattr(im, "pixels", im)) for im in images])


def train(manifest: DatasetManifest, model_cfg: ModelConfig | None = None,
          train_cfg: TrainConfig | None = None, sdgm_cfg: SDGMConfig | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    tc = train_cfg or TrainConfig()
    mc = model_cfg or ModelConfig()
    if tc.precision is not None and tc.precision != mc.precision:
        mc = ModelConfig.from_dict({**mc.to_dict(), "precision": tc.precision})
    if len(manifest) == 0:
        raise EmptyDataset("cannot train on an empty manifest")
    emit = log or (lambda line: None)
    inputs, gts = manifest.load_pairs()
    labels = [e.exposure_label for e in manifest.entries]
    model = WECDG(mc, sdgm_cfg)

    # phase 1: descriptor module as an exposure classifier
    sdgm_history: list[dict] = []
    with T.default_dtype(mc.dtype):
        images = _stack(inputs).astype(mc.dtype)
        targets = np.array([label_index(lb) for lb in labels])

        def on_epoch(epoch, loss):
            rec = {"phase": "sdgm", "epoch": epoch, "loss": float(loss)}
            sdgm_history.append(rec)
            emit(format_record(rec))

        train_sdgm(model.sdgm, images, targets, epochs=tc.sdgm_epochs, lr=tc.sdgm_lr,
                   batch=tc.sdgm_batch, seed=tc.seed, on_epoch=on_epoch)
        acc = accuracy(model.sdgm, images, targets)
        emit(format_record({"phase": "sdgm", "train_accuracy": float(acc)}))

    # phase 2: restoration with teacher-forced descriptors
    desc = {lb: model.descriptor(lb).embedding for lb in sorted(set(labels))}
    rng = np.random.default_rng([tc.seed, 0xED])
    opt = Adam(model.tree, lr=tc.lr)
    history: list[dict] = []
    order: list[int] = []
    n = len(labels)
    with T.default_dtype(mc.dtype):
        for step in range(tc.steps):
            idx = []
            for _ in range(tc.batch):
                if not order:
                    order = list(rng.permutation(n))
                idx.append(order.pop())
            pairs = [crop_and_augment(inputs[i], gts[i], tc, rng) for i in idx]
            x = np.stack([p[0] for p in pairs]).astype(mc.dtype)
            y = np.stack([p[1] for p in pairs]).astype(mc.dtype)
            e = np.stack([desc[labels[i]] for i in idx]).astype(mc.dtype)
            model.tree.zero_grad()
            out = model(Tensor(x), e)
            loss, parts = total_loss(out, y, x, tc.weights)
            if not all(math.isfinite(v) for v in parts.values()):
                raise TrainingDiverged(f"non-finite loss at step {step}: {format_record(parts)}")
            T.backward(loss)
            opt.step()
            rec = {"phase": "restore", "step": step, **parts}
            history.append(rec)
            if step % tc.log_every == 0 or step == tc.steps - 1:
                recent = [h["total"] for h in history[-LOSS_WINDOW:]]
                emit(format_record({**rec, "avg": float(np.mean(recent))}))
    return TrainResult(model, history, sdgm_history)


# -- evaluation --------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list[dict]            # one per group: label, n, psnr, ssim, base_psnr, base_ssim
    per_image: list[dict]
    mode: str

    def row(self, label: str) -> dict:
        for r in self.rows:
            if r["label"] == label:
                return r
        raise KeyError(label)

    @property
    def gain(self) -> float:
        avg = self.row("average")
        return avg["psnr"] - avg["base_psnr"]

    def lines(self, footer: bool = True) -> list[str]:
        cols = ("label", "n", "psnr", "ssim", "base_psnr", "base_ssim")
        out = ["\t".join(cols)]
        for r in self.rows:
            out.append("\t".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
        if footer:
            ref = REFERENCE_SCORES
            out.append(f"# reference (full-scale model, {ref['dataset']} average): "
                       f"PSNR {ref['psnr']:.2f} SSIM {ref['ssim']:.4f}; not a target at this scale")
        return out


def evaluate(manifest: DatasetManifest, model: WECDG, mode: str = "manual") -> EvalReport:
    """PSNR/SSIM of corrected outputs and of the uncorrected inputs, grouped by
    exposure class. ``average`` covers the degraded (non well-exposed) entries."""
    if mode not in ("manual", "auto"):
        raise ValueError(f"mode must be manual or auto, got {mode!r}")
    if len(manifest) == 0:
        raise EmptyDataset("cannot evaluate an empty manifest")
    inputs, gts = manifest.load_pairs()
    per_image = []
    for entry, x, y in zip(manifest.entries, inputs, gts):
        if mode == "manual":
            out = model.correct_manual(x, entry.exposure_label)
            used = entry.descriptor_label
        else:
            out, d, _ = model.correct_auto(x)
            used = d.label
        per_image.append({
            "input": entry.input_path, "label": BASE_LABELS[label_index(entry.exposure_label)],
            "descriptor": used,
            "psnr": psnr(out, y), "ssim": ssim_value(out, y),
            "base_psnr": psnr(x, y), "base_ssim": ssim_value(x, y),
        })
    rows = []
    for label in BASE_LABELS:
        group = [r for r in per_image if r["label"] == label]
        if group:
            rows.append(_summary(label, group))
    degraded = [r for r in per_image if r["label"] != "well-exposed"]
    rows.append(_summary("average", degraded or per_image))
    return EvalReport(rows, per_image, mode)


def _summary(label: str, group: list[dict]) -> dict:
    row = {"label": label, "n": len(group)}
    for k in ("psnr", "ssim", "base_psnr", "base_ssim"):
        row[k] = float(np.mean([r[k] for r in group]))
    return row
