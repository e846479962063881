"""Rank and reciprocal-rank-feature (RRF) encodings.

Score and rank vectors are plain 1-D numpy arrays.  An RRF vector keeps only
the indices of the ``k`` best-ranked dimensions, best first; the entry at
1-based position ``p`` carries the implied value ``1/p`` and every other
dimension is zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

DEFAULT_K = 10


@dataclass(frozen=True)
class RrfVector:
    """Sparse k-hot reciprocal-rank encoding over ``dim`` dimensions."""

    dim: int
    k: int
    entries: tuple[int, ...]

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        if self.dim < 1 or self.k < 1:
            raise InvalidInputError(f"dim and k must be >= 1, got dim={self.dim} k={self.k}")
        if len(entries) != min(self.k, self.dim):
            raise InvalidInputError(
                f"expected {min(self.k, self.dim)} entries, got {len(entries)}")
        if len(set(entries)) != len(entries):
            raise InvalidInputError(f"duplicate indices in {entries}")
        if any(e < 0 or e >= self.dim for e in entries):
            raise InvalidInputError(f"index out of range [0,{self.dim}) in {entries}")

    @property
    def values(self) -> np.ndarray:
        return 1.0 / np.arange(1, len(self.entries) + 1, dtype=np.float64)

    def __len__(self):
        return len(self.entries)


def as_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise InvalidInputError("score vector must be 1-D and nonempty")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("score vector contains non-finite values")
    return s


def rank_of(scores) -> np.ndarray:
    """Ranks (1 = best) in descending-score order; ties go to the lower index."""
    s = as_scores(scores)
    order = np.argsort(-s, kind="stable")
    ranks = np.empty(s.size, dtype=np.int64)
    ranks[order] = np.arange(1, s.size + 1)
    return ranks


def rrf_encode(ranks, k: int = DEFAULT_K) -> RrfVector:
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    ranks = np.asarray(ranks)
    n = ranks.size
    order = np.argsort(ranks, kind="stable")
    return RrfVector(n, k, tuple(order[: min(k, n)].tolist()))


def onehot_from_rrf(v: RrfVector) -> int:
    if not v.entries:
        raise InvalidInputError("RRF vector has no entries")
    return v.entries[0]


def sample_random_rrf(n: int, k: int, rng: np.random.Generator) -> RrfVector:
    """Top-k indices of an ``n``-dim uniform noise vector, best first."""
    if k < 1 or k > n:
        raise InvalidInputError(f"need 1 <= k <= N, got k={k} N={n}")
    noise = rng.random(n)
    return RrfVector(n, k, tuple(np.argsort(-noise, kind="stable")[:k].tolist()))


def sample_random_rrf_batch(n: int, k: int, count: int, rng: np.random.Generator) -> list[RrfVector]:
    """Same stream and result as ``count`` successive :func:`sample_random_rrf` calls."""
    if k < 1 or k > n:
        raise InvalidInputError(f"need 1 <= k <= N, got k={k} N={n}")
    if count == 0:
        return []
    noise = rng.random((count, n))
    top = np.argsort(-noise, axis=1, kind="stable")[:, :k]
    return [RrfVector(n, k, tuple(row)) for row in top.tolist()]


def rrf_to_dense(v: RrfVector) -> np.ndarray:
    out = np.zeros(v.dim, dtype=np.float64)
    out[list(v.entries)] = v.values
    return out


def rrf_matrix(vectors: Sequence[RrfVector]) -> np.ndarray:
    """Stack the dense expansions of ``vectors`` into an (n, dim) array."""
    if not vectors:
        raise InvalidInputError("no vectors to stack")
    dim = vectors[0].dim
    if any(v.dim != dim for v in vectors):
        raise InvalidInputError("vectors differ in dimension")
    out = np.zeros((len(vectors), dim), dtype=np.float64)
    lengths = {len(v) for v in vectors}
    if len(lengths) == 1:
        idx = np.array([v.entries for v in vectors], dtype=np.int64)
        vals = vectors[0].values
        rows = np.arange(len(vectors))[:, None]
        out[rows, idx] = vals[None, :]
    else:
        for i, v in enumerate(vectors):
            out[i, list(v.entries)] = v.values
    return out
