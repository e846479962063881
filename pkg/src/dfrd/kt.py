"""Data-free knowledge transfer from black-box teachers.

A student sends queries, a teacher answers each one with a class label (and,
optionally, the k-hot RRF of its ranking), and the resulting (query, answer)
pairs become the student's pseudo training set.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError, TransferError
from .mlp import LabeledDataset, MlpModel, TrainConfig, forward_softmax, train
from .rrf import DEFAULT_K, RrfVector, rrf_to_dense
from .samplers import QuerySet, SamplerSpec, build_query_set, queries_matrix


def _as_input(query) -> np.ndarray:
    if isinstance(query, RrfVector):
        return rrf_to_dense(query)
    return np.asarray(query, dtype=np.float64)


def _answers_from_probs(probs: np.ndarray, k: int):
    order = np.argsort(-probs, axis=1, kind="stable")[:, :min(k, probs.shape[1])]
    return order[:, 0], order


def blackbox_answer(model: MlpModel, query, k: int = DEFAULT_K):
    """Answer one query the way a black-box teacher would.

    Returns ``(label, soft)`` where ``soft`` is the k-hot RRF of the teacher's
    class ranking and ``label`` is its rank-1 class.
    """
    x = _as_input(query)
    if x.shape != (model.config.in_dim,):
        raise InvalidInputError(
            f"query has dimension {x.shape[-1]}, teacher expects {model.config.in_dim}")
    labels, order = _answers_from_probs(forward_softmax(model, x[None, :]), k)
    return int(labels[0]), RrfVector(model.config.out_dim, k, tuple(order[0].tolist()))


def blackbox_answer_batch(model: MlpModel, x: np.ndarray, k: int = DEFAULT_K):
    """Vectorized :func:`blackbox_answer` over the rows of a dense input matrix."""
    return _answers_from_probs(forward_softmax(model, x), k)


class TeacherHandle:
    """Opaque answer function; the only way a student can reach a teacher.

    Subclasses implement :meth:`answer`.  :meth:`answer_many` may be
    overridden for speed but must consult the teacher exactly once per query.
    """

    teacher_id: str = "teacher"

    def answer(self, query):
        """Return ``(label, soft_or_None)`` for one query."""
        raise NotImplementedError

    def answer_many(self, queries: Sequence):
        out = []
        for seq, q in enumerate(queries):
            try:
                out.append(self.answer(q))
            except TransferError as exc:
                raise TransferError(str(exc), seq=seq) from exc
        return out


class LocalTeacher(TeacherHandle):
    """In-process teacher backed by an MLP that callers cannot reach."""

    def __init__(self, model: MlpModel, teacher_id: str, k: int = DEFAULT_K, soft: bool = True):
        self._model = model
        self._k = k
        self._soft = soft
        self.teacher_id = teacher_id
        self.calls = 0

    @property
    def n_dim(self):
        return self._model.config.in_dim

    @property
    def n_classes(self):
        return self._model.config.out_dim

    def answer(self, query):
        self.calls += 1
        label, soft = blackbox_answer(self._model, query, self._k)
        return label, (soft if self._soft else None)

    def answer_many(self, queries):
        if not queries:
            return []
        x = queries_matrix(queries)
        if x.shape[1] != self._model.config.in_dim:
            raise InvalidInputError(
                f"query has dimension {x.shape[1]}, teacher expects {self._model.config.in_dim}")
        labels, order = blackbox_answer_batch(self._model, x, self._k)
        self.calls += len(queries)
        c = self._model.config.out_dim
        if not self._soft:
            return [(int(y), None) for y in labels]
        return [(int(y), RrfVector(c, self._k, tuple(row)))
                for y, row in zip(labels.tolist(), order.tolist())]


@dataclass(frozen=True)
class PseudoSample:
    x: object
    y: int
    soft_y: RrfVector | None = None

    def __post_init__(self):
        if self.soft_y is not None and self.soft_y.entries[0] != self.y:
            raise InvalidInputError("soft answer disagrees with the 1-hot answer")


@dataclass
class PseudoDataset:
    samples: list = field(default_factory=list)
    source_teacher: str = ""
    sampler_spec: SamplerSpec | None = None

    def __len__(self):
        return len(self.samples)

    @property
    def inputs(self) -> list:
        return [s.x for s in self.samples]


def reconstruct_dataset(teacher: TeacherHandle, queries: QuerySet,
                        spec: SamplerSpec | None = None) -> PseudoDataset:
    if len(queries) == 0:
        raise InvalidInputError("empty query set")
    answers = teacher.answer_many(queries.queries)
    samples = [PseudoSample(q, y, soft) for q, (y, soft) in zip(queries.queries, answers)]
    return PseudoDataset(samples, teacher.teacher_id, spec)


def soft_targets(samples: Sequence[PseudoSample], n_classes: int) -> np.ndarray:
    """Reciprocal-rank answer values normalized to sum to one."""
    t = np.zeros((len(samples), n_classes))
    for i, s in enumerate(samples):
        if s.soft_y is None:
            raise InvalidInputError(f"sample {i} has no soft answer")
        vals = s.soft_y.values
        t[i, list(s.soft_y.entries)] = vals / vals.sum()
    return t


def pseudo_to_labeled(samples: Sequence[PseudoSample]) -> LabeledDataset:
    return LabeledDataset(queries_matrix([s.x for s in samples]), [s.y for s in samples])


def distill(student: MlpModel, data: Sequence[PseudoDataset], tc: TrainConfig,
            mode: str = "hard") -> MlpModel:
    """Train ``student`` on the concatenation of the given pseudo-datasets."""
    samples = [s for d in data for s in d.samples]
    if not samples:
        raise InvalidInputError("no pseudo-samples to distill from")
    labeled = pseudo_to_labeled(samples)
    if mode == "hard":
        model, _ = train(student, labeled, tc)
    elif mode == "soft":
        model, _ = train(student, labeled, tc,
                         targets=soft_targets(samples, student.config.out_dim))
    else:
        raise InvalidInputError(f"unknown distillation mode {mode!r}")
    return model


def teacher_seed(seed: int, teacher_id: str) -> int:
    """Per-teacher sampler seed; stable across processes and teacher orderings."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(teacher_id.encode())])
               .generate_state(1)[0])


def kt_session(student: MlpModel, teachers: Sequence[TeacherHandle],
               oracle_pools: Mapping[str, Sequence], spec: SamplerSpec, tc: TrainConfig,
               mode: str = "hard", schedule: str = "pooled", k: int = DEFAULT_K,
               base_count: int | None = None):
    """Query every teacher, then distill the student.

    Returns ``(student, datasets)`` with datasets ordered by ``teacher_id``.
    ``schedule="pooled"`` runs one training pass over all pseudo-data;
    ``"sequential"`` trains on each encounter in the given teacher order.
    """
    if not teachers:
        raise InvalidInputError("a session needs at least one teacher")
    ids = [t.teacher_id for t in teachers]
    if len(set(ids)) != len(ids):
        raise InvalidInputError(f"teacher ids must be unique: {ids}")
    if schedule not in ("pooled", "sequential"):
        raise InvalidInputError(f"unknown schedule {schedule!r}")
    datasets = {}
    for t in teachers:
        tspec = spec.with_seed(teacher_seed(spec.seed, t.teacher_id))
        qs = build_query_set(oracle_pools.get(t.teacher_id), tspec, base_count,
                             n_dim=student.config.in_dim, k=k)
        datasets[t.teacher_id] = reconstruct_dataset(t, qs, tspec)
    if schedule == "pooled":
        ordered = [datasets[tid] for tid in sorted(datasets)]
        return distill(student, ordered, tc, mode), ordered
    for t in teachers:
        student = distill(student, [datasets[t.teacher_id]], tc, mode)
    return student, [datasets[tid] for tid in sorted(datasets)]


def export_pseudo_dataset(ds: PseudoDataset, path) -> None:
    """Write one ``{"x":[indices best-first],"y":label}`` record per line."""
    with open(path, "w", newline="\n") as fh:
        for i, s in enumerate(ds.samples):
            if not isinstance(s.x, RrfVector):
                raise InvalidInputError(f"sample {i} is a dense query and has no RRF record form")
            fh.write(json.dumps({"x": list(s.x.entries), "y": s.y}, separators=(",", ":")) + "\n")


def read_rrf_records(path, n_dim: int):
    """Parse a JSON-lines file of ``{"x": [...], "y"?: ...}`` records.

    Returns ``(queries, labels)``; ``labels`` holds ``None`` where absent.
    """
    queries, labels = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                queries.append(RrfVector(n_dim, len(rec["x"]), rec["x"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad record ({exc})") from exc
            labels.append(rec.get("y"))
    return queries, labels
