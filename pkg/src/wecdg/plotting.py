"""Figures written next to CLI reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COMPONENTS = ("l1", "ssim", "con", "per")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def _moving_average(v: np.ndarray, window: int) -> np.ndarray:
    if len(v) < window or window <= 1:
        return v
    kernel = np.ones(window) / window
    return np.convolve(v, kernel, mode="valid")


def loss_curve(history: list[dict], path, window: int = 50, sdgm_history: list[dict] | None = None) -> Path:
    """Total loss (raw and moving average) and each weighted-sum component."""
    steps = np.array([h["step"] for h in history])
    ncols = 3 if sdgm_history else 2
    fig, axes = plt.subplots(1, ncols, figsize=(4.2 * ncols, 3.4))
    total = np.array([h["total"] for h in history])
    ax = axes[0]
    ax.plot(steps, total, lw=0.6, alpha=0.4, color="C0", label="total")
    ma = _moving_average(total, window)
    ax.plot(steps[len(steps) - len(ma):], ma, lw=1.6, color="C0", label=f"avg({window})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax = axes[1]
    for k in COMPONENTS:
        v = _moving_average(np.array([h[k] for h in history]), window)
        ax.plot(steps[len(steps) - len(v):], v, lw=1.2, label=k)
    ax.set_xlabel("step")
    ax.set_yscale("log")
    ax.set_title("components", fontsize=10)
    ax.legend(frameon=False, fontsize=8)
    if sdgm_history:
        ax = axes[2]
        ax.plot([h["epoch"] for h in sdgm_history], [h["loss"] for h in sdgm_history], marker=".", color="C3")
        ax.axhline(np.log(3), ls=":", color="grey", lw=1)
        ax.set_xlabel("epoch")
        ax.set_title("descriptor cross-entropy", fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def eval_bars(report, path) -> Path:
    """PSNR and SSIM per exposure group, corrected vs uncorrected input."""
    labels = [r["label"] for r in report.rows]
    x = np.arange(len(labels))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for ax, key in zip(axes, ("psnr", "ssim")):
        ax.bar(x - 0.2, [r[f"base_{key}"] for r in report.rows], 0.4, label="input", color="0.7")
        ax.bar(x + 0.2, [r[key] for r in report.rows], 0.4, label="corrected", color="C0")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylabel(key.upper())
    axes[0].legend(frameon=False, fontsize=8)
    fig.suptitle(f"evaluation ({report.mode} descriptors)", fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def subband_grid(levels, path) -> Path:
    """One row per decomposition level: c_A (rescaled) and |c_H|, |c_V|, |c_D|."""
    fig, axes = plt.subplots(len(levels), 4, figsize=(8, 2.1 * len(levels)), squeeze=False)
    for i, sb in enumerate(levels):
        scale = 2.0 ** (i + 1)
        row = axes[i]
        row[0].imshow(np.clip(np.asarray(sb.c_A.data if hasattr(sb.c_A, "data") else sb.c_A) / scale, 0, 1))
        row[0].set_title(f"level {i + 1} c_A", fontsize=8)
        for ax, name in zip(row[1:], ("c_H", "c_V", "c_D")):
            band = getattr(sb, name)
            band = np.asarray(getattr(band, "data", band))
            mag = np.abs(band).mean(axis=-1)
            ax.imshow(mag / max(mag.max(), 1e-12), cmap="magma", vmin=0, vmax=1)
            ax.set_title(f"|{name}|", fontsize=8)
        for ax in row:
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def swap_panel(a, b, out_a, out_b, which: str, path) -> Path:
    """Inputs on top, swapped reconstructions below, means in the titles."""
    fig, axes = plt.subplots(2, 2, figsize=(6, 6))
    panels = ((a, "input a"), (b, "input b"), (out_a, f"a with b's {which.upper()}"),
              (out_b, f"b with a's {which.upper()}"))
    for ax, (img, title) in zip(axes.ravel(), panels):
        img = np.asarray(getattr(img, "pixels", img))
        ax.imshow(np.clip(img, 0, 1))
        ax.set_title(f"{title}\nmean {img.mean():.4f}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)
