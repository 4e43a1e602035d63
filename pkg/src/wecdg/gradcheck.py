"""Central finite-difference verification of autodiff gradients.

The relative error for one tensor is ``||g_auto - g_fd|| / max(||g_auto||,
||g_fd||, 1e-12)`` over the sampled coordinates; a block passes when every
checked tensor is below the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, default_dtype


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err) and self.max_rel_err < self.tol)


def check_gradients(fn: Callable[[], Tensor], tensors: dict[str, Tensor] | Sequence[Tensor],
                    h: float = 1e-5, max_coords: int | None = 12, seed: int = 0,
                    name: str = "block", tol: float = 1e-4) -> GradCheckResult:
    """Compare autodiff against central differences for a scalar ``fn()``.

    ``max_coords`` caps the number of coordinates probed per tensor (chosen
    with a seeded generator); ``None`` probes all of them.
    """
    if not isinstance(tensors, dict):
        tensors = {f"t{i}": t for i, t in enumerate(tensors)}
    for t in tensors.values():
        t.grad = None
        t.requires_grad = True
    loss = fn()
    backward(loss)
    rng = np.random.default_rng(seed)
    per_tensor = {}
    for tname, t in tensors.items():
        auto = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        for k, idx in enumerate(coords):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = float(fn().data)
            flat[idx] = orig - h
            fm = float(fn().data)
            flat[idx] = orig
            numeric[k] = (fp - fm) / (2 * h)
        analytic = auto.reshape(-1)[coords]
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        per_tensor[tname] = float(np.linalg.norm(analytic - numeric) / scale)
        t.grad = None
    worst = max(per_tensor.values()) if per_tensor else 0.0
    return GradCheckResult(name, worst, per_tensor, tol)


def weighted_sum_loss(out: Tensor, weights: np.ndarray) -> Tensor:
    """sum(out * R) for a fixed random R, so no gradient entry cancels by symmetry."""
    return (out * Tensor(weights)).sum()


def run_suite(seed: int = 0, blocks: Sequence[str] | None = None,
              tol: float = 1e-4) -> list[GradCheckResult]:
    """Run the finite-difference suite over every block (float64)."""
    from . import _gradsuite

    with default_dtype(np.float64):
        cases = _gradsuite.cases(seed)
        results = []
        for name, build in cases:
            if blocks is not None and name not in blocks:
                continue
            fn, tensors, max_coords = build()
            results.append(check_gradients(fn, tensors, max_coords=max_coords,
                                           seed=seed, name=name, tol=tol))
    return results
