"""Graded similarity pairs: the (query_id, map_id, psi) records used as training signal.

A pair set is logically a full query x map matrix of similarities in [0, 1].
Pairs with psi = 0 may be left implicit: storage keeps only explicit entries,
and readers treat an absent combination of known ids as psi = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class GradedPair:
    """One graded similarity record."""

    query_id: str
    map_id: str
    psi: float


class GradedPairSet:
    """Explicit graded pairs plus the id universe that implies the zeros.

    `query_ids` and `map_ids` define the logical matrix; any (query, map)
    combination without an explicit entry has similarity 0.
    """

    def __init__(
        self,
        query_ids: Iterable[str],
        map_ids: Iterable[str],
        pairs: Iterable[GradedPair] = (),
    ):
        self.query_ids = list(query_ids)
        self.map_ids = list(map_ids)
        _check_unique(self.query_ids, "query")
        _check_unique(self.map_ids, "map")
        self._qindex = {q: i for i, q in enumerate(self.query_ids)}
        self._mindex = {m: i for i, m in enumerate(self.map_ids)}
        self.pairs: list[GradedPair] = []
        self._by_key: dict[tuple[str, str], float] = {}
        for p in pairs:
            self.add(p)

    def add(self, pair: GradedPair) -> None:
        if pair.query_id not in self._qindex:
            raise InvalidInputError(f"unknown query id {pair.query_id!r}")
        if pair.map_id not in self._mindex:
            raise InvalidInputError(f"unknown map id {pair.map_id!r}")
        if not (0.0 <= pair.psi <= 1.0) or not np.isfinite(pair.psi):
            raise InvalidInputError(f"psi must lie in [0, 1], got {pair.psi!r}")
        key = (pair.query_id, pair.map_id)
        if key in self._by_key:
            raise InvalidInputError(f"duplicate pair {key!r}")
        self._by_key[key] = pair.psi
        self.pairs.append(pair)

    def psi(self, query_id: str, map_id: str) -> float:
        """Similarity of a pair; implied 0 for absent combinations of known ids."""
        if query_id not in self._qindex:
            raise InvalidInputError(f"unknown query id {query_id!r}")
        if map_id not in self._mindex:
            raise InvalidInputError(f"unknown map id {map_id!r}")
        return self._by_key.get((query_id, map_id), 0.0)

    def has_query(self, query_id: str) -> bool:
        return query_id in self._qindex

    def has_map(self, map_id: str) -> bool:
        return map_id in self._mindex

    @property
    def logical_pair_count(self) -> int:
        return len(self.query_ids) * len(self.map_ids)

    @property
    def explicit_pair_count(self) -> int:
        return len(self.pairs)

    def sorted_pairs(self) -> list[GradedPair]:
        """Explicit pairs ordered query-major, then by map id."""
        return sorted(self.pairs, key=lambda p: (p.query_id, p.map_id))

    def explicit_index_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(query_index, map_index, psi) arrays over explicit pairs, sorted order."""
        ps = self.sorted_pairs()
        qi = np.array([self._qindex[p.query_id] for p in ps], dtype=np.int64)
        mi = np.array([self._mindex[p.map_id] for p in ps], dtype=np.int64)
        psi = np.array([p.psi for p in ps], dtype=np.float64)
        return qi, mi, psi

    def implied_zero_flat_indices(self) -> np.ndarray:
        """Flat indices (query_index * n_maps + map_index) of all implied-zero pairs.

        Explicit pairs are excluded whatever their psi, so an explicitly stored
        zero is not duplicated.
        """
        n_q, n_m = len(self.query_ids), len(self.map_ids)
        mask = np.ones(n_q * n_m, dtype=bool)
        if self.pairs:
            qi, mi, _ = self.explicit_index_arrays()
            mask[qi * n_m + mi] = False
        return np.flatnonzero(mask)

    def pair_from_flat_index(self, flat: int) -> GradedPair:
        n_m = len(self.map_ids)
        q, m = divmod(int(flat), n_m)
        qid, mid = self.query_ids[q], self.map_ids[m]
        return GradedPair(qid, mid, self._by_key.get((qid, mid), 0.0))

    def __iter__(self) -> Iterator[GradedPair]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def _check_unique(ids: list[str], kind: str) -> None:
    if len(set(ids)) != len(ids):
        seen: set[str] = set()
        dup = next(i for i in ids if i in seen or seen.add(i))  # type: ignore[func-returns-value]
        raise InvalidInputError(f"duplicate {kind} id {dup!r}")
