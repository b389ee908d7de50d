"""Batch composition over graded pairs, driven only by similarity bins.

Four naive strategies compose each training batch from fixed similarity-bin
quotas (no latent-space distances are ever computed):

    A: 50% psi in [0.5, 1], 25% psi in (0, 0.5), 25% psi = 0
    B: 25% psi in [0.75, 1], 25% in [0.5, 0.75), 25% in (0, 0.5), 25% psi = 0
    C: one third of each A bin
    D: 50% psi in [0.5, 1], 50% psi in [0, 0.5)

Quota counts use largest-remainder apportionment with ties to the
lower-indexed bin. Within a bin, sampling is uniform without replacement per
epoch pass; bins smaller than their share are reshuffled and recycled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .pairs import GradedPair, GradedPairSet

DEFAULT_BATCH_SIZE = 64


def _bins_half_soft_hard(psi: np.ndarray) -> np.ndarray:
    return np.select([psi >= 0.5, psi > 0.0], [0, 1], default=2)


def _bins_quartile(psi: np.ndarray) -> np.ndarray:
    return np.select([psi >= 0.75, psi >= 0.5, psi > 0.0], [0, 1, 2], default=3)


def _bins_pos_neg(psi: np.ndarray) -> np.ndarray:
    return np.where(psi >= 0.5, 0, 1)


@dataclass(frozen=True)
class BatchStrategy:
    """A named quota table over similarity bins."""

    name: str
    bin_names: tuple[str, ...]
    quotas: tuple[float, ...]

    def __post_init__(self):
        if len(self.bin_names) != len(self.quotas):
            raise InvalidInputError("bin names and quotas must align")
        if abs(sum(self.quotas) - 1.0) > 1e-12:
            raise InvalidInputError("quotas must sum to 1")

    def bin_indices(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        return _BIN_RULES[self.name](psi)

    def quota_counts(self, batch_size: int) -> np.ndarray:
        """Largest-remainder apportionment of the batch over bins."""
        if batch_size < 1:
            raise InvalidInputError("batch size must be positive")
        exact = np.asarray(self.quotas) * batch_size
        counts = np.floor(exact).astype(int)
        remainders = exact - counts
        missing = batch_size - int(counts.sum())
        order = np.lexsort((np.arange(len(self.quotas)), -remainders))
        counts[order[:missing]] += 1
        return counts


STRATEGIES: dict[str, BatchStrategy] = {
    "A": BatchStrategy(
        "A", ("positive", "soft_negative", "hard_negative"), (0.5, 0.25, 0.25)
    ),
    "B": BatchStrategy(
        "B",
        ("hard_positive", "soft_positive", "soft_negative", "hard_negative"),
        (0.25, 0.25, 0.25, 0.25),
    ),
    "C": BatchStrategy(
        "C", ("positive", "soft_negative", "hard_negative"), (1 / 3, 1 / 3, 1 / 3)
    ),
    "D": BatchStrategy("D", ("positive", "negative"), (0.5, 0.5)),
}

_BIN_RULES = {
    "A": _bins_half_soft_hard,
    "B": _bins_quartile,
    "C": _bins_half_soft_hard,
    "D": _bins_pos_neg,
}

DEFAULT_STRATEGY = STRATEGIES["A"]


def get_strategy(name: str | BatchStrategy) -> BatchStrategy:
    if isinstance(name, BatchStrategy):
        return name
    try:
        return STRATEGIES[name.upper()]
    except KeyError:
        raise InvalidInputError(f"unknown strategy {name!r}; expected one of A, B, C, D") from None


def bin_of(psi: float, strategy: str | BatchStrategy = DEFAULT_STRATEGY) -> str:
    """Name of the bin a similarity value falls in under a strategy."""
    if not (np.isfinite(psi) and 0.0 <= psi <= 1.0):
        raise InvalidInputError(f"psi must lie in [0, 1], got {psi!r}")
    strategy = get_strategy(strategy)
    idx = int(strategy.bin_indices(np.array([psi]))[0])
    return strategy.bin_names[idx]


@dataclass(frozen=True)
class Batch:
    """One ordered batch of graded pairs satisfying the strategy quota."""

    pairs: tuple[GradedPair, ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def psi_values(self) -> np.ndarray:
        return np.array([p.psi for p in self.pairs])


def _bin_pools(pairs: GradedPairSet, strategy: BatchStrategy) -> list[np.ndarray]:
    """Flat logical pair indices per bin, in ascending canonical order.

    Implied-zero pairs join whichever bin contains psi = 0.
    """
    n_bins = len(strategy.bin_names)
    pools: list[np.ndarray] = [np.empty(0, dtype=np.int64) for _ in range(n_bins)]
    qi, mi, psi = pairs.explicit_index_arrays()
    if qi.size:
        flat = qi * len(pairs.map_ids) + mi
        bins = strategy.bin_indices(psi)
        for k in range(n_bins):
            pools[k] = flat[bins == k]
    zero_bin = int(strategy.bin_indices(np.array([0.0]))[0])
    pools[zero_bin] = np.sort(
        np.concatenate([pools[zero_bin], pairs.implied_zero_flat_indices()])
    )
    return pools


def epoch_schedule(
    pairs: GradedPairSet,
    strategy: str | BatchStrategy = DEFAULT_STRATEGY,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int | np.random.Generator = 0,
) -> Iterator[Batch]:
    """Batches for one epoch.

    Every bin is shuffled once up front and consumed without replacement;
    exhausted bins reshuffle and recycle. The epoch length is
    ceil(largest_bin_size / that bin's quota count).
    """
    strategy = get_strategy(strategy)
    counts = strategy.quota_counts(batch_size)
    pools = _bin_pools(pairs, strategy)
    for name, pool, count in zip(strategy.bin_names, pools, counts):
        if count > 0 and pool.size == 0:
            raise ConfigurationError(
                f"strategy {strategy.name} requires pairs in bin {name!r} but none exist"
            )
    sizes = np.array([p.size for p in pools])
    largest = int(np.argmax(sizes))
    if counts[largest] == 0:
        raise ConfigurationError(
            f"batch size {batch_size} gives bin {strategy.bin_names[largest]!r} a zero quota"
        )
    n_batches = math.ceil(sizes[largest] / counts[largest])

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shuffled = [rng.permutation(p) if p.size else p for p in pools]
    cursors = [0] * len(pools)

    def draw(k: int, want: int) -> np.ndarray:
        out = []
        while want > 0:
            pool = shuffled[k]
            available = pool.size - cursors[k]
            if available == 0:
                shuffled[k] = rng.permutation(pools[k])
                cursors[k] = 0
                available = pool.size
            take = min(want, available)
            out.append(shuffled[k][cursors[k] : cursors[k] + take])
            cursors[k] += take
            want -= take
        return np.concatenate(out)

    for _ in range(n_batches):
        members: list[GradedPair] = []
        for k, count in enumerate(counts):
            if count:
                members.extend(pairs.pair_from_flat_index(f) for f in draw(k, count))
        yield Batch(tuple(members))


def sample_batch(
    pairs: GradedPairSet,
    strategy: str | BatchStrategy = DEFAULT_STRATEGY,
    batch_size: int = DEFAULT_BATCH_SIZE,
    seed: int | np.random.Generator = 0,
) -> Batch:
    """First batch of a fresh epoch schedule (deterministic under the seed)."""
    return next(epoch_schedule(pairs, strategy, batch_size, seed))
