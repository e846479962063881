"""Synthetic cross-season workload and the recursive generation loop.

Each place class has a prototype score vector; an observation of class ``c``
in season ``s`` is ``prototype[c] + drift[c, s] + noise`` turned into a 10-hot
RRF vector, standing in for a scene-graph embedding of a view image.

In every generation a fresh student meets a supervised teacher that has seen a
random ~10% of the classes in the current season, plus the previous
generation's student.  The new student learns only from their answers and
then becomes a teacher for the next generation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InvalidConfigError
from .kt import LocalTeacher, kt_session, teacher_seed
from .mlp import LabeledDataset, MlpConfig, MlpModel, TrainConfig, init_mlp, predict_top1, train
from .rrf import DEFAULT_K, RrfVector, rrf_matrix
from .samplers import SamplerSpec, stream

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

# stream ids under the world seed
_WORLD, _SEASON, _CLASSES, _TEACHER_INIT, _STUDENT_INIT, _SAMPLER, _SHUFFLE = range(7)

TEACHER_A, TEACHER_B = "supervised", "previous-student"


@dataclass(frozen=True)
class WorldConfig:
    n_classes: int = 100
    n_seasons: int = 10
    signal_strength: float = 3.0
    drift_scale: float = 0.5
    noise_scale: float = 1.0
    samples_per_class_per_season: int = 20
    experience_prob: float = 0.1
    k: int = DEFAULT_K
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise InvalidConfigError("n_classes must be >= 2")
        if self.n_seasons < 1:
            raise InvalidConfigError("n_seasons must be >= 1")
        if not 0.0 <= self.experience_prob <= 1.0:
            raise InvalidConfigError("experience_prob must lie in [0, 1]")
        if min(self.signal_strength, self.drift_scale, self.noise_scale) < 0:
            raise InvalidConfigError("scales must be >= 0")
        if self.samples_per_class_per_season < 4:
            raise InvalidConfigError("samples_per_class_per_season must be >= 4")
        if self.k < 1:
            raise InvalidConfigError("k must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple[int, ...] = (256,)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run; mirrors the JSON config file."""

    world: WorldConfig = field(default_factory=WorldConfig)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(step_size=0.1))
    teacher_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=100, step_size=0.1))
    model: ModelConfig = field(default_factory=ModelConfig)
    distill_mode: str = "hard"
    schedule: str = "pooled"

    def to_json(self) -> str:
        doc = {"config_version": CONFIG_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            doc[f.name] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
        doc["model"]["hidden_dims"] = list(self.model.hidden_dims)
        return json.dumps(doc, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        version = doc.get("config_version")
        if version != CONFIG_VERSION:
            raise InvalidConfigError(f"unsupported config_version {version!r}")
        sections = {"world": WorldConfig, "sampler": SamplerSpec, "train": TrainConfig,
                    "teacher_train": TrainConfig, "model": ModelConfig}
        kwargs = {}
        for key, value in doc.items():
            if key == "config_version":
                continue
            if key in sections:
                known = {f.name for f in fields(sections[key])}
                unknown = set(value) - known
                if unknown:
                    raise InvalidConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
                if key == "model" and "hidden_dims" in value:
                    value = dict(value, hidden_dims=tuple(value["hidden_dims"]))
                try:
                    kwargs[key] = sections[key](**value)
                except (TypeError, ValueError) as exc:
                    raise InvalidConfigError(f"bad {key!r} section: {exc}") from exc
            elif key in ("distill_mode", "schedule"):
                kwargs[key] = value
            else:
                raise InvalidConfigError(f"unknown config key {key!r}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)


@dataclass
class World:
    config: WorldConfig
    prototypes: np.ndarray  # (C, C)
    drift: np.ndarray  # (C, S, C)


@dataclass
class SeasonDataset:
    season: int
    train: LabeledDataset
    test: LabeledDataset
    train_queries: list  # RrfVector per train row, same order


@dataclass
class GenerationReport:
    generation: int
    top1: float
    experienced_classes: frozenset
    cumulative_experienced: int
    sampler_spec: SamplerSpec
    seed: int
    top1_unexperienced: float | None = None
    top1_experienced: float | None = None
    teacher_accuracy: float | None = None
    teacher_checksum: str = ""
    n_teachers: int = 0
    n_pseudo_samples: int = 0


@dataclass
class Generation:
    """Carry-over from one generation to the next."""

    student: MlpModel
    pool: list
    known_classes: frozenset
    report: GenerationReport


def gen_world(cfg: WorldConfig) -> World:
    rng = stream(cfg.seed, _WORLD)
    c, s = cfg.n_classes, cfg.n_seasons
    prototypes = cfg.signal_strength * np.eye(c) + 0.1 * rng.standard_normal((c, c))
    drift = cfg.drift_scale * rng.standard_normal((c, s, c))
    return World(cfg, prototypes, drift)


def _encode_rows(scores: np.ndarray, k: int) -> list[RrfVector]:
    n = scores.shape[1]
    top = np.argsort(-scores, axis=1, kind="stable")[:, :min(k, n)]
    return [RrfVector(n, k, tuple(row)) for row in top.tolist()]


def synth_observations(world: World, classes, season: int, rng: np.random.Generator,
                       k: int | None = None) -> list[RrfVector]:
    cfg = world.config
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= cfg.n_classes):
        raise InvalidConfigError("class id out of range")
    if not 0 <= season < cfg.n_seasons:
        raise InvalidConfigError(f"season {season} out of range")
    noise = rng.standard_normal((classes.size, cfg.n_classes))
    scores = world.prototypes[classes] + world.drift[classes, season] + cfg.noise_scale * noise
    return _encode_rows(scores, cfg.k if k is None else k)


def synth_observation(world: World, c: int, s: int, rng: np.random.Generator) -> RrfVector:
    return synth_observations(world, [c], s, rng)[0]


def make_season_dataset(world: World, s: int, cfg: WorldConfig | None = None) -> SeasonDataset:
    """Per class, the first 75% of draws go to train and the rest to test."""
    cfg = cfg or world.config
    per = cfg.samples_per_class_per_season
    n_train = (3 * per) // 4
    classes = np.repeat(np.arange(cfg.n_classes), per)
    obs = synth_observations(world, classes, s, stream(cfg.seed, _SEASON, s))
    draw = np.tile(np.arange(per), cfg.n_classes)
    is_train = draw < n_train
    x = rrf_matrix(obs)
    train_idx = np.flatnonzero(is_train)
    test_idx = np.flatnonzero(~is_train)
    return SeasonDataset(
        s,
        LabeledDataset(x[train_idx], classes[train_idx]),
        LabeledDataset(x[test_idx], classes[test_idx]),
        [obs[i] for i in train_idx],
    )


def assign_experienced_classes(n_classes: int, p: float, rng: np.random.Generator) -> frozenset:
    """Independent Bernoulli(p) per class, redrawn until nonempty."""
    if not 0.0 <= p <= 1.0:
        raise InvalidConfigError(f"experience probability must lie in [0,1], got {p}")
    if p == 0.0:
        raise InvalidConfigError("experience probability 0 can never yield a nonempty class set")
    while True:
        chosen = np.flatnonzero(rng.random(n_classes) < p)
        if chosen.size:
            return frozenset(chosen.tolist())


def _accuracy(model, data: LabeledDataset, mask=None):
    if mask is not None:
        data = data.subset(np.flatnonzero(mask))
    if len(data) == 0:
        return None
    return float(np.mean(predict_top1(model, data.x) == data.y))


def generation_classes(wc: WorldConfig, i: int) -> frozenset:
    """Classes experienced by generation ``i``'s supervised teacher."""
    return assign_experienced_classes(wc.n_classes, wc.experience_prob,
                                      stream(wc.seed, _CLASSES, i))


def train_supervised_teacher(world: World, season: SeasonDataset, classes: frozenset,
                             cfg: ExperimentConfig, generation: int):
    """Fresh MLP trained on the season's train split restricted to ``classes``.

    Returns ``(model, pool)`` where the pool is the teacher's training inputs.
    """
    wc = cfg.world
    idx = np.flatnonzero(np.isin(season.train.y, sorted(classes)))
    mc = MlpConfig(wc.n_classes, wc.n_classes, cfg.model.hidden_dims)
    model = init_mlp(mc, stream(wc.seed, _TEACHER_INIT, generation))
    tc = replace(cfg.teacher_train,
                 shuffle_seed=teacher_seed(cfg.teacher_train.shuffle_seed, f"A{generation}"))
    model, _ = train(model, season.train.subset(idx), tc)
    return model, [season.train_queries[i] for i in idx]


def run_generation(world: World, i: int, cfg: ExperimentConfig,
                   prev: Generation | None = None) -> Generation:
    """One generation: meet the teachers, distill a fresh student, evaluate it."""
    wc = cfg.world
    if not 1 <= i <= wc.n_seasons:
        raise InvalidConfigError(f"generation {i} outside 1..{wc.n_seasons}")
    season = make_season_dataset(world, i - 1)
    experienced = generation_classes(wc, i)
    teacher_a, pool_a = train_supervised_teacher(world, season, experienced, cfg, i)

    teachers = [LocalTeacher(teacher_a, TEACHER_A, k=wc.k)]
    pools = {TEACHER_A: pool_a}
    known = set(experienced)
    if prev is not None:
        teachers.append(LocalTeacher(prev.student, TEACHER_B, k=wc.k))
        pools[TEACHER_B] = prev.pool
        known |= prev.known_classes

    mc = MlpConfig(wc.n_classes, wc.n_classes, cfg.model.hidden_dims)
    student = init_mlp(mc, stream(wc.seed, _STUDENT_INIT, i))
    spec = cfg.sampler.with_seed(teacher_seed(cfg.sampler.seed, f"gen{i}"))
    tc = replace(cfg.train, shuffle_seed=teacher_seed(cfg.train.shuffle_seed, f"S{i}"))
    student, datasets = kt_session(student, teachers, pools, spec, tc,
                                   mode=cfg.distill_mode, schedule=cfg.schedule, k=wc.k)
    pool = [x for d in datasets for x in d.inputs]

    test = season.test
    seen_mask = np.isin(test.y, sorted(known))
    exp_mask = np.isin(test.y, sorted(experienced))
    report = GenerationReport(
        generation=i,
        top1=_accuracy(student, test),
        experienced_classes=experienced,
        cumulative_experienced=len(known),
        sampler_spec=cfg.sampler,
        seed=wc.seed,
        top1_unexperienced=_accuracy(student, test, ~seen_mask),
        top1_experienced=_accuracy(student, test, seen_mask),
        teacher_accuracy=_accuracy(teacher_a, test, exp_mask),
        teacher_checksum=teacher_a.checksum(),
        n_teachers=len(teachers),
        n_pseudo_samples=sum(len(d) for d in datasets),
    )
    log.info("generation %d: top1=%.4f cumulative=%d", i, report.top1, len(known))
    return Generation(student, pool, frozenset(known), report)


def run_experiment(cfg: ExperimentConfig, callback=None, return_state: bool = False):
    """Run generations 1..S, each student becoming the next generation's teacher."""
    world = gen_world(cfg.world)
    reports = []
    gen = None
    for i in range(1, cfg.world.n_seasons + 1):
        gen = run_generation(world, i, cfg, gen)
        reports.append(gen.report)
        if callback is not None:
            callback(gen.report)
    if return_state:
        return reports, gen
    return reports
