"""Low-rank adapters for the attention query/value projections.

A frozen weight W (d x k) is adapted as W + s * B @ A with B (d x r) zero at
creation and A (r x k) small Gaussian, so a fresh adapter leaves the model
function untouched.  Only the factors train; the base tensors never change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .model import ModelConfig

ADAPTER_TARGETS = ("q", "v")
DEFAULT_ALPHA = 8.0
A_INIT_STD = 0.02


@dataclass
class LoRAAdapter:
    """One (B, A) factor pair plus its rank-normalized scaling."""

    a: np.ndarray       # (r, k)
    b: np.ndarray       # (d, r)
    rank: int
    scaling: float

    @staticmethod
    def create(d: int, k: int, rank: int, rng: np.random.Generator,
               alpha: float = DEFAULT_ALPHA, dtype=np.float32) -> "LoRAAdapter":
        if rank < 1:
            raise ValueError("rank must be >= 1")
        if rank > min(d, k) // 2:
            raise ValueError(f"rank {rank} too large for a {d}x{k} weight; need r <= min(d,k)/2")
        a = rng.normal(0.0, A_INIT_STD, size=(rank, k)).astype(dtype)
        b = np.zeros((d, rank), dtype=dtype)
        return LoRAAdapter(a=a, b=b, rank=rank, scaling=alpha / rank)

    def delta(self) -> np.ndarray:
        """The dense update s * B @ A."""
        return self.scaling * (self.b @ self.a)


def effective_weight(w: np.ndarray, adapter: LoRAAdapter) -> np.ndarray:
    """W + s * B @ A without mutating W."""
    d, k = w.shape
    if adapter.b.shape[0] != d or adapter.a.shape[1] != k:
        raise ShapeError(
            f"adapter ({adapter.b.shape} @ {adapter.a.shape}) does not fit weight {w.shape}")
    if adapter.b.shape[1] != adapter.a.shape[0]:
        raise ShapeError("adapter factors disagree on rank")
    return w + adapter.delta()


def merge(adapter: LoRAAdapter, w: np.ndarray) -> np.ndarray:
    """Fold the adapter into a dense weight for adapter-free inference.

    Merging twice without resetting the factors double-counts the update;
    callers own that bookkeeping.
    """
    return effective_weight(w, adapter)


class AdapterSet:
    """Query/value adapters for every layer, all at one rank."""

    def __init__(self, adapters: dict[tuple[int, str], LoRAAdapter], rank: int, alpha: float):
        self.adapters = adapters
        self.rank = rank
        self.alpha = alpha

    @staticmethod
    def create(config: ModelConfig, rank: int, rng: np.random.Generator,
               alpha: float = DEFAULT_ALPHA, dtype=np.float32) -> "AdapterSet":
        adapters = {}
        for layer in range(config.layers):
            for target in ADAPTER_TARGETS:
                adapters[(layer, target)] = LoRAAdapter.create(
                    config.dim, config.dim, rank, rng, alpha=alpha, dtype=dtype)
        return AdapterSet(adapters, rank=rank, alpha=alpha)

    def get(self, layer: int, target: str) -> LoRAAdapter:
        return self.adapters[(layer, target)]

    def effective(self, layer: int, target: str, w: np.ndarray) -> np.ndarray:
        return effective_weight(w, self.adapters[(layer, target)])

    def tensor_items(self) -> list[tuple[str, np.ndarray]]:
        """Deterministically ordered (name, tensor) pairs, names ``layer.target.A|B``."""
        items = []
        for (layer, target) in sorted(self.adapters):
            ad = self.adapters[(layer, target)]
            items.append((f"{layer}.{target}.A", ad.a))
            items.append((f"{layer}.{target}.B", ad.b))
        return items

    def apply_update(self, deltas: dict[str, np.ndarray], step: float) -> None:
        """In-place ``tensor -= step * delta`` for every named factor."""
        for (layer, target), ad in self.adapters.items():
            ka, kb = f"{layer}.{target}.A", f"{layer}.{target}.B"
            if ka in deltas:
                ad.a -= (step * deltas[ka]).astype(ad.a.dtype, copy=False)
            if kb in deltas:
                ad.b -= (step * deltas[kb]).astype(ad.b.dtype, copy=False)

    def copy(self) -> "AdapterSet":
        return AdapterSet(
            {key: LoRAAdapter(a=ad.a.copy(), b=ad.b.copy(), rank=ad.rank, scaling=ad.scaling)
             for key, ad in self.adapters.items()},
            rank=self.rank, alpha=self.alpha)

    def zeros_like_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t, dtype=np.float64) for name, t in self.tensor_items()}


def trainable_count(config: ModelConfig, rank: int) -> tuple[int, int]:
    """(adapter parameter count, replaced dense parameter count).

    Each adapted d x k weight contributes r * (d + k) trainable entries
    against d * k dense ones; with square attention projections (k = d) and
    two targets per layer this is 2L * r * 2d versus 2L * d * d.
    """
    d = config.dim
    per_weight = rank * (d + d)
    full_per_weight = d * d
    n_weights = len(ADAPTER_TARGETS) * config.layers
    return n_weights * per_weight, n_weights * full_per_weight


def merge_into_parameters(params: dict[str, np.ndarray], adapters: AdapterSet) -> dict[str, np.ndarray]:
    """New parameter dict with every adapter folded into its base weight."""
    merged = {k: v.copy() for k, v in params.items()}
    for (layer, target), ad in adapters.adapters.items():
        name = f"layers.{layer}.w{target}"
        merged[name] = merge(ad, merged[name])
    return merged
