"""Exhaustive nearest-neighbor retrieval with optional PCA whitening.

The whitening transform is always fitted on map descriptors only: mean
centering followed by projection onto covariance eigenvectors scaled by
inverse square-root eigenvalues. Whitened vectors are L2-renormalized by
default (configurable, since retrieval conventions differ). Search is exact:
all distances are computed and sorted, ties broken by ascending map id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import Descriptor
from .errors import DegenerateInputError, InvalidInputError

EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class WhitenTransform:
    """Mean and projection of a fitted PCA whitening."""

    mean: np.ndarray
    projection: np.ndarray  # (output_dims, input_dims)
    renormalize: bool = True

    @property
    def input_dim(self) -> int:
        return self.mean.size

    @property
    def output_dim(self) -> int:
        return self.projection.shape[0]

    def apply(self, x) -> np.ndarray:
        """Whiten one descriptor; the zero vector stays zero under renormalization."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise InvalidInputError(
                f"descriptor dim {x.shape} does not match transform input {self.input_dim}"
            )
        y = self.projection @ (x - self.mean)
        if self.renormalize:
            n = np.linalg.norm(y)
            y = y / n if n >= 1e-12 else np.zeros_like(y)
        return y

    def apply_matrix(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != self.input_dim:
            raise InvalidInputError(f"matrix shape {xs.shape} does not match transform input")
        y = (xs - self.mean) @ self.projection.T
        if self.renormalize:
            norms = np.linalg.norm(y, axis=1, keepdims=True)
            safe = norms >= 1e-12
            y = np.where(safe, y / np.where(safe, norms, 1.0), 0.0)
        return y


def fit_whitening(
    map_descriptors: np.ndarray, output_dims: int, renormalize: bool = True
) -> WhitenTransform:
    """Fit PCA whitening on the map descriptor matrix (never on queries).

    Components are sorted by descending eigenvalue of the sample covariance
    (N - 1 divisor); eigenvalues below 1e-12 are clamped up before the inverse
    square root. All-identical descriptors have no principal directions and
    raise a degenerate-input error.
    """
    x = np.asarray(map_descriptors, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("need at least two map descriptors to fit whitening")
    n, d = x.shape
    if not (1 <= output_dims <= min(d, n)):
        raise InvalidInputError(
            f"output dims must lie in [1, min(D={d}, N={n})], got {output_dims}"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] < EIGENVALUE_FLOOR:
        raise DegenerateInputError("map descriptors are all identical; covariance is zero")
    kept = np.maximum(evals[:output_dims], EIGENVALUE_FLOOR)
    projection = evecs[:, :output_dims].T / np.sqrt(kept)[:, None]
    return WhitenTransform(mean=mean, projection=projection, renormalize=renormalize)


def apply_whitening(transform: WhitenTransform, x) -> Descriptor:
    """Whiten one descriptor; a zero image (x at the mean) is flagged degenerate."""
    y = transform.apply(x)
    degenerate = bool(np.all(y == 0.0))
    return Descriptor(y, normalized=transform.renormalize and not degenerate, degenerate=degenerate)


class RetrievalIndex:
    """Immutable map-descriptor store supporting exact nearest-neighbor search."""

    def __init__(self, ids, matrix, whitener: WhitenTransform | None = None):
        self.ids = list(ids)
        if len(set(self.ids)) != len(self.ids):
            raise InvalidInputError("map ids must be unique")
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.ids):
            raise InvalidInputError("descriptor matrix must have one row per id")
        if len(self.ids) == 0:
            raise InvalidInputError("cannot build an index over zero descriptors")
        self.whitener = whitener
        self.matrix = whitener.apply_matrix(matrix) if whitener else matrix
        self._ids_arr = np.array(self.ids)

    @classmethod
    def build(
        cls,
        ids,
        matrix,
        whiten_dims: int | None = None,
        renormalize: bool = True,
    ) -> "RetrievalIndex":
        """Build an index, optionally fitting whitening on these map descriptors."""
        whitener = None
        if whiten_dims is not None:
            whitener = fit_whitening(np.asarray(matrix, dtype=float), whiten_dims, renormalize)
        return cls(ids, matrix, whitener)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def search(self, query, k: int) -> list[tuple[str, float]]:
        """The k nearest map entries: (map_id, distance) ascending, id-tiebroken."""
        if k < 1:
            raise InvalidInputError("k must be at least 1")
        q = np.asarray(query, dtype=float)
        if self.whitener is not None:
            q = self.whitener.apply(q)
        if q.shape != (self.dim,):
            raise InvalidInputError(f"query dim {q.shape} does not match index dim {self.dim}")
        dists = np.linalg.norm(self.matrix - q, axis=1)
        order = np.lexsort((self._ids_arr, dists))[: min(k, len(self.ids))]
        return [(self.ids[i], float(dists[i])) for i in order]

    def search_many(self, query_ids, queries, k: int) -> dict[str, list[tuple[str, float]]]:
        """Ranked matches for each query row, keyed by query id."""
        queries = np.asarray(queries, dtype=float)
        if queries.ndim != 2 or queries.shape[0] != len(query_ids):
            raise InvalidInputError("query matrix must have one row per query id")
        return {qid: self.search(queries[i], k) for i, qid in enumerate(query_ids)}


def search(index: RetrievalIndex, query, k: int) -> list[tuple[str, float]]:
    return index.search(query, k)
