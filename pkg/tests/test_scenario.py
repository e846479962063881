from dataclasses import replace

import numpy as np
import pytest

import dfrd.scenario as scenario
from dfrd.errors import InvalidConfigError
from dfrd.kt import PseudoDataset
from dfrd.mlp import MlpConfig, TrainConfig, init_mlp, predict_top1, train
from dfrd.samplers import SamplerSpec
from dfrd.scenario import (ExperimentConfig, WorldConfig, assign_experienced_classes, gen_world,
                           make_season_dataset, run_experiment, run_generation, synth_observation,
                           synth_observations, train_supervised_teacher)


def small_cfg(**world):
    base = dict(n_classes=20, n_seasons=3, experience_prob=0.3, seed=5)
    base.update(world)
    return replace(ExperimentConfig(), world=WorldConfig(**base),
                   sampler=SamplerSpec(kind="mixed", r=10, m=1),
                   train=TrainConfig(epochs=10, step_size=0.1),
                   teacher_train=TrainConfig(epochs=50, step_size=0.1),
                   model=scenario.ModelConfig((32,)))


def test_world_is_deterministic():
    a, b = gen_world(WorldConfig(seed=3)), gen_world(WorldConfig(seed=3))
    assert np.array_equal(a.prototypes, b.prototypes) and np.array_equal(a.drift, b.drift)
    assert a.prototypes.shape == (100, 100) and a.drift.shape == (100, 10, 100)


def test_no_drift_means_identical_seasons():
    world = gen_world(WorldConfig(drift_scale=0.0))
    assert not world.drift.any()
    obs0 = synth_observations(world, [4] * 50, 0, np.random.default_rng(1))
    obs7 = synth_observations(world, [4] * 50, 7, np.random.default_rng(1))
    assert obs0 == obs7


def test_separable_world_supervised_accuracy():
    cfg = WorldConfig(signal_strength=10.0, noise_scale=0.3, seed=2)
    season = make_season_dataset(gen_world(cfg), 0)
    model = init_mlp(MlpConfig(100, 100, (256,), seed=0))
    model, _ = train(model, season.train, TrainConfig(epochs=30, step_size=0.1))
    assert np.mean(predict_top1(model, season.test.x) == season.test.y) >= 0.99


def test_noiseless_observation_ranks_true_class_first():
    world = gen_world(WorldConfig(noise_scale=0.0, drift_scale=0.0, signal_strength=3.0))
    rng = np.random.default_rng(0)
    for c in range(100):
        v = synth_observation(world, c, 3, rng)
        assert v.entries[0] == c and len(v) == 10


def test_top1_rate_decreases_with_noise():
    rates = []
    for sigma in (0.0, 1.0, 2.0, 4.0):
        world = gen_world(WorldConfig(noise_scale=sigma, seed=1))
        classes = np.tile(np.arange(100), 20)
        obs = synth_observations(world, classes, 0, np.random.default_rng(7))
        rates.append(np.mean([v.entries[0] for v in obs] == classes))
    assert all(a > b for a, b in zip(rates, rates[1:])), rates


def test_season_dataset_split():
    world = gen_world(WorldConfig())
    ds = make_season_dataset(world, 2)
    assert (len(ds.train), len(ds.test)) == (1500, 500)
    assert np.bincount(ds.test.y, minlength=100).tolist() == [5] * 100
    assert np.bincount(ds.train.y, minlength=100).tolist() == [15] * 100
    assert len(ds.train_queries) == 1500
    again = make_season_dataset(world, 2)
    assert np.array_equal(again.train.x, ds.train.x)


def test_experienced_classes():
    rng = np.random.default_rng(0)
    assert assign_experienced_classes(100, 1.0, rng) == frozenset(range(100))
    sizes = [len(assign_experienced_classes(100, 0.1, rng)) for _ in range(10_000)]
    assert abs(np.mean(sizes) - 10) <= 0.5
    assert min(sizes) >= 1
    with pytest.raises(InvalidConfigError):
        assign_experienced_classes(100, 0.0, rng)
    with pytest.raises(InvalidConfigError):
        assign_experienced_classes(100, 1.5, rng)


def test_world_config_validation():
    for bad in (dict(n_classes=1), dict(n_seasons=0), dict(experience_prob=2.0),
                dict(noise_scale=-1.0)):
        with pytest.raises(InvalidConfigError):
            WorldConfig(**bad)


def test_first_generation_consults_one_teacher():
    cfg = small_cfg()
    world = gen_world(cfg.world)
    g1 = run_generation(world, 1, cfg)
    assert g1.report.n_teachers == 1
    assert g1.report.n_pseudo_samples == 110
    g2 = run_generation(world, 2, cfg, g1)
    assert g2.report.n_teachers == 2
    assert g2.report.n_pseudo_samples == 220
    assert g2.known_classes == g1.known_classes | g2.report.experienced_classes
    with pytest.raises(InvalidConfigError):
        run_generation(world, 4, cfg)


def test_student_sees_only_pseudo_data(monkeypatch):
    cfg = small_cfg()
    real = scenario.kt_session
    seen = []

    def audit(student, teachers, pools, spec, tc, **kw):
        out_student, datasets = real(student, teachers, pools, spec, tc, **kw)
        seen.append(all(isinstance(d, PseudoDataset) for d in datasets))
        assert all(not hasattr(t, "weights") for t in teachers)
        return out_student, datasets

    monkeypatch.setattr(scenario, "kt_session", audit)
    run_experiment(cfg)
    assert seen == [True] * cfg.world.n_seasons


def test_experiment_bookkeeping_and_determinism():
    cfg = small_cfg(n_seasons=4)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert [r.top1 for r in a] == [r.top1 for r in b]
    assert [r.generation for r in a] == [1, 2, 3, 4]
    union = set()
    for rep in a:
        union |= rep.experienced_classes
        assert rep.cumulative_experienced == len(union)
    counts = [r.cumulative_experienced for r in a]
    assert counts == sorted(counts)
    single = run_experiment(replace(cfg, world=replace(cfg.world, n_seasons=1)))
    assert len(single) == 1


def test_untrained_student_is_at_chance():
    world = gen_world(WorldConfig(seed=4))
    test = make_season_dataset(world, 0).test
    for seed in range(3):
        student = init_mlp(MlpConfig(100, 100, (256,), seed=seed))
        acc = np.mean(predict_top1(student, test.x) == test.y)
        assert abs(acc - 0.01) <= 2 / np.sqrt(len(test))


def test_no_drift_teacher_accuracy_stable_across_seasons():
    # 100 test draws per class over 20 classes keeps the sampling error near 1 point.
    wc = WorldConfig(drift_scale=0.0, samples_per_class_per_season=400, seed=6)
    cfg = replace(ExperimentConfig(), world=wc,
                  teacher_train=TrainConfig(epochs=30, step_size=0.1))
    world = gen_world(wc)
    classes = frozenset(range(0, 100, 5))
    accs = []
    for s in (0, 4, 9):
        season = make_season_dataset(world, s)
        teacher, _ = train_supervised_teacher(world, season, classes, cfg, s + 1)
        idx = np.flatnonzero(np.isin(season.test.y, sorted(classes)))
        accs.append(np.mean(predict_top1(teacher, season.test.x[idx]) == season.test.y[idx]))
    assert max(accs) - min(accs) <= 0.03, accs


def test_unexperienced_classes_near_chance():
    cfg = replace(ExperimentConfig(), world=WorldConfig(n_seasons=3, seed=2),
                  sampler=SamplerSpec(kind="oracle", m=2))
    reports = run_experiment(cfg)
    assert all(abs(r.top1_unexperienced - 0.01) <= 0.02 for r in reports)


def test_config_json_roundtrip(tmp_path):
    cfg = small_cfg()
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert ExperimentConfig.load(path) == cfg
    doc = ExperimentConfig().to_json().replace('"config_version": 1', '"config_version": 2')
    path.write_text(doc)
    with pytest.raises(InvalidConfigError):
        ExperimentConfig.load(path)
    with pytest.raises(InvalidConfigError):
        ExperimentConfig.from_dict({"config_version": 1, "world": {"colour": 1}})
    with pytest.raises(InvalidConfigError):
        ExperimentConfig.from_dict({"config_version": 1, "wrld": {}})
