"""Query generators used to reconstruct a teacher's training set.

Four kinds are supported: ``oracle`` draws from the teacher's own training
inputs, ``naive_random`` draws unstructured uniform noise, ``regularized_random``
draws random k-hot RRF vectors, and ``mixed`` combines ``100*m`` oracle
queries with ``r*m`` random ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .rrf import DEFAULT_K, RrfVector, rank_of, rrf_encode, rrf_matrix, sample_random_rrf_batch

KINDS = ("oracle", "naive_random", "regularized_random", "mixed")
RANDOM_KINDS = ("naive", "regularized")
ORACLE, RANDOM = "oracle", "random"

# Separate streams so that changing r never perturbs the oracle draws.
_ORACLE_STREAM, _RANDOM_STREAM, _SHUFFLE_STREAM = 1, 2, 3

Query = Union[RrfVector, np.ndarray]


def default_r_values() -> list[int]:
    return [10 * 2 ** i for i in range(11)]


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "oracle"
    r: int = 0
    random_kind: str = "regularized"
    seed: int = 0
    m: int = 10
    naive_dense: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown sampler kind {self.kind!r}; expected one of {KINDS}")
        if self.random_kind not in RANDOM_KINDS:
            raise InvalidConfigError(f"unknown random_kind {self.random_kind!r}")
        if self.r < 0:
            raise InvalidConfigError(f"r must be >= 0, got {self.r}")
        if self.m < 1:
            raise InvalidConfigError(f"m must be >= 1, got {self.m}")

    @property
    def base_count(self) -> int:
        return 100 * self.m

    @property
    def effective_r(self) -> int:
        return self.r if self.kind == "mixed" else 0

    def with_seed(self, seed: int) -> SamplerSpec:
        return replace(self, seed=seed)


@dataclass
class QuerySet:
    """Queries plus a per-query provenance tag (``"oracle"`` or ``"random"``).

    A query is normally an :class:`RrfVector`; the naive dense-noise baseline
    emits raw 1-D arrays instead.
    """

    queries: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.queries) != len(self.provenance):
            raise InvalidInputError("queries and provenance differ in length")

    def __len__(self):
        return len(self.queries)

    def count(self, tag: str) -> int:
        return sum(1 for t in self.provenance if t == tag)

    def is_dense(self, i: int) -> bool:
        return not isinstance(self.queries[i], RrfVector)

    def matrix(self) -> np.ndarray:
        return queries_matrix(self.queries)

    def __add__(self, other: QuerySet) -> QuerySet:
        return QuerySet(self.queries + other.queries, self.provenance + other.provenance)


def queries_matrix(queries: Sequence[Query]) -> np.ndarray:
    """Dense model-input matrix for a mix of RRF and raw dense queries."""
    if all(isinstance(q, RrfVector) for q in queries):
        return rrf_matrix(queries)
    rows = [np.asarray(q, dtype=np.float64) if not isinstance(q, RrfVector) else None
            for q in queries]
    dim = next(len(r) for r in rows if r is not None)
    out = np.zeros((len(queries), dim))
    rrf_idx = [i for i, r in enumerate(rows) if r is None]
    if rrf_idx:
        out[rrf_idx] = rrf_matrix([queries[i] for i in rrf_idx])
    for i, r in enumerate(rows):
        if r is not None:
            out[i] = r
    return out


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *map(int, keys)])


def oracle_sample(pool: Sequence[Query], count: int, rng: np.random.Generator) -> QuerySet:
    """Uniform draws with replacement from ``pool``."""
    if len(pool) == 0:
        raise InvalidInputError("oracle pool is empty")
    idx = rng.integers(0, len(pool), size=count)
    return QuerySet([pool[i] for i in idx], [ORACLE] * count)


def naive_random_sample(n: int, count: int, rng: np.random.Generator,
                        k: int = DEFAULT_K, dense: bool = False) -> QuerySet:
    """Uniform [0,1)^n noise queries.

    With ``dense=False`` each noise vector is re-encoded as the RRF of its own
    ranking, so every query has ``min(k, n)`` entries.  With ``dense=True`` the
    raw noise vector is the query.
    """
    if count < 0:
        raise InvalidInputError(f"count must be >= 0, got {count}")
    if count == 0:
        return QuerySet()
    noise = rng.random((count, n))
    if dense:
        queries = list(noise)
    else:
        queries = [rrf_encode(rank_of(row), k) for row in noise]
    return QuerySet(queries, [RANDOM] * count)


def regularized_random_sample(n: int, count: int, rng: np.random.Generator,
                              k: int = DEFAULT_K) -> QuerySet:
    return QuerySet(sample_random_rrf_batch(n, k, count, rng), [RANDOM] * count)


def build_query_set(oracle_pool: Sequence[Query] | None, spec: SamplerSpec,
                    base_count: int | None = None, n_dim: int | None = None,
                    k: int = DEFAULT_K) -> QuerySet:
    """Assemble the query set for one teacher encounter.

    ``base_count`` must be a multiple of 100 (defaults to ``100 * spec.m``).
    Mixed sets hold exactly ``base_count`` oracle and ``r * base_count / 100``
    random queries, shuffled deterministically from ``spec.seed``.
    """
    if base_count is None:
        base_count = spec.base_count
    if base_count < 100 or base_count % 100:
        raise InvalidInputError(f"base_count must be a positive multiple of 100, got {base_count}")
    m = base_count // 100
    if n_dim is None:
        if not oracle_pool:
            raise InvalidInputError("n_dim is required when there is no oracle pool")
        first = oracle_pool[0]
        n_dim = first.dim if isinstance(first, RrfVector) else len(first)

    def random_part(count, random_kind):
        rng = stream(spec.seed, _RANDOM_STREAM)
        if random_kind == "naive":
            return naive_random_sample(n_dim, count, rng, k=k, dense=spec.naive_dense)
        return regularized_random_sample(n_dim, count, rng, k=k)

    if spec.kind == "oracle":
        return oracle_sample(oracle_pool or [], base_count, stream(spec.seed, _ORACLE_STREAM))
    if spec.kind == "naive_random":
        return random_part(base_count, "naive")
    if spec.kind == "regularized_random":
        return random_part(base_count, "regularized")

    qs = (oracle_sample(oracle_pool or [], base_count, stream(spec.seed, _ORACLE_STREAM))
          + random_part(spec.r * m, spec.random_kind))
    perm = stream(spec.seed, _SHUFFLE_STREAM).permutation(len(qs))
    return QuerySet([qs.queries[i] for i in perm], [qs.provenance[i] for i in perm])
