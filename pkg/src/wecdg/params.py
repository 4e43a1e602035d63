"""Named trainable parameters, seeded initialisation and the Adam optimiser."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .errors import MissingGrad, ShapeMismatch
from .tensor import Tensor, get_default_dtype


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, name), so a parameter's initial value does
    not depend on the order in which the tree was built."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


class ParameterTree:
    """Flat mapping of dotted names (``edrm.0.irs.ss2d.w_b``) to tensors."""

    def __init__(self, seed: int = 0, dtype=None):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype or get_default_dtype()).type
        self.entries: dict[str, Tensor] = {}

    def add(self, name: str, shape, init="uniform", fan_in: int | None = None) -> Tensor:
        """Register a parameter.

        ``init`` is ``"uniform"`` (U(-sqrt(1/fan_in), +sqrt(1/fan_in)), fan_in
        defaults to ``shape[0]``), ``"zeros"``, ``"ones"``, ``"normal"`` or an
        explicit array.
        """
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(int(s) for s in np.atleast_1d(shape)) if not np.isscalar(shape) else (int(shape),)
        if isinstance(init, str):
            if init == "uniform":
                fan = fan_in if fan_in is not None else shape[0]
                bound = np.sqrt(1.0 / fan)
                value = param_rng(self.seed, name).uniform(-bound, bound, size=shape)
            elif init == "zeros":
                value = np.zeros(shape)
            elif init == "ones":
                value = np.ones(shape)
            elif init == "normal":
                value = param_rng(self.seed, name).standard_normal(shape)
            else:
                raise ValueError(f"unknown init {init!r}")
        else:
            value = np.broadcast_to(np.asarray(init, dtype=np.float64), shape)
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self.entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def names(self) -> list[str]:
        return list(self.entries)

    def sub(self, prefix: str) -> "ParamView":
        return ParamView(self, prefix)

    def num_params(self, prefix: str = "") -> int:
        return sum(t.size for n, t in self.entries.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.entries.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self.entries.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            value = np.asarray(state[name])
            if value.shape != t.shape:
                raise ShapeMismatch(f"{name}: expected {t.shape}, got {value.shape}")
            t.data = value.astype(self.dtype)
        if strict:
            extra = set(state) - set(self.entries)
            if extra:
                raise KeyError(f"unexpected parameters {sorted(extra)[:5]}")


class ParamView:
    """Prefix-scoped view into a ParameterTree."""

    def __init__(self, tree: ParameterTree, prefix: str):
        self.tree = tree
        self.prefix = prefix.rstrip(".")

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name: str) -> Tensor:
        return self.tree[self._full(name)]

    def __contains__(self, name: str) -> bool:
        return self._full(name) in self.tree

    def add(self, name: str, shape, init="uniform", fan_in=None) -> Tensor:
        return self.tree.add(self._full(name), shape, init, fan_in)

    def sub(self, prefix: str) -> "ParamView":
        return ParamView(self.tree, self._full(prefix))


class Adam:
    """Adam with bias correction; moments are kept per parameter name."""

    def __init__(self, params: ParameterTree, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGrad(f"no gradient for {missing[0]!r} ({len(missing)} missing)")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
