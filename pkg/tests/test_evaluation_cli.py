import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from dfrd.cli import demo_config, main
from dfrd.errors import InvalidInputError
from dfrd.evaluation import (CSV_HEADER, format_csv, plot_generation_curves, sweep_r,
                             top1_accuracy, write_report_csv)
from dfrd.kt import read_rrf_records
from dfrd.mlp import LabeledDataset, MlpConfig, TrainConfig, init_mlp, load_mlp, save_mlp, zero_mlp
from dfrd.samplers import SamplerSpec
from dfrd.scenario import ExperimentConfig, ModelConfig, WorldConfig, run_experiment


def tiny_cfg(seasons=3, seed=0):
    return replace(ExperimentConfig(),
                   world=WorldConfig(n_classes=10, n_seasons=seasons, experience_prob=0.3,
                                     seed=seed),
                   sampler=SamplerSpec(kind="mixed", r=10, m=1),
                   train=TrainConfig(epochs=5, step_size=0.1),
                   teacher_train=TrainConfig(epochs=20, step_size=0.1),
                   model=ModelConfig((16,)))


def test_top1_examples():
    rng = np.random.default_rng(0)
    x = rng.random((500, 8))
    y = np.repeat(np.arange(100), 5)
    assert top1_accuracy(zero_mlp(MlpConfig(8, 100)), LabeledDataset(x, y)) == pytest.approx(0.01)
    model = init_mlp(MlpConfig(8, 100, (12,), seed=1))
    perm = rng.permutation(500)
    assert top1_accuracy(model, LabeledDataset(x[perm], y[perm])) == \
        top1_accuracy(model, LabeledDataset(x, y))
    with pytest.raises(InvalidInputError):
        top1_accuracy(model, LabeledDataset(np.zeros((0, 8)), []))


def test_csv_format_and_rerun_identical(tmp_path):
    cfg = tiny_cfg()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_report_csv(run_experiment(cfg), a)
    write_report_csv(run_experiment(cfg), b)
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    gen, top1, cum, r, seed = lines[1].split(",")
    assert (gen, r, seed) == ("1", "10", "0")
    assert len(top1.split(".")[1]) == 6
    with pytest.raises(InvalidInputError):
        format_csv([])


def test_sweep_only_r_varies():
    cfg = tiny_cfg(seasons=2)
    result = sweep_r(cfg, [40, 10, 20])
    assert [row.r for row in result.rows] == [10, 20, 40]
    assert all(len(row.top1) == 2 for row in result.rows)
    for gen in range(2):
        sums = {row.reports[gen].teacher_checksum for row in result.rows}
        assert len(sums) == 1
    assert [rep.n_pseudo_samples for rep in result.row(40).reports] == [140, 280]
    with pytest.raises(KeyError):
        result.row(7)


def test_parallel_sweep_matches_serial():
    cfg = tiny_cfg(seasons=2)
    serial = sweep_r(cfg, [10, 20])
    parallel = sweep_r(cfg, [10, 20], workers=2)
    assert [r.top1 for r in serial.rows] == [r.top1 for r in parallel.rows]


def test_plot_formats_and_reproducible_svg(tmp_path):
    reports = run_experiment(tiny_cfg(seasons=2))
    png = tmp_path / "fig.png"
    plot_generation_curves(reports, png, title="t")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    plot_generation_curves(reports, a)
    plot_generation_curves(reports, b)
    assert a.read_bytes() == b.read_bytes()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code == 1
    assert main([]) == 1
    assert main(["run", "--sampler", "oracle", "--r", "10"]) == 1
    assert main(["run", "--m", "0"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"config_version": 9}')
    assert main(["run", "--config", str(bad)]) == 2


def test_cli_run_with_config_and_plot(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(tiny_cfg().to_json())
    out = tmp_path / "out" / "run.csv"
    assert main(["run", "--config", str(cfg_path), "--replicas", "2", "--out", str(out),
                 "--plot", "--save-student", str(tmp_path / "s.bin")]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 2 * 3
    assert {line.split(",")[4] for line in lines[1:]} == {"0", "1"}
    assert out.with_suffix(".svg").read_text().lstrip().startswith("<?xml")
    assert load_mlp(tmp_path / "s.bin").config.dims == (10, 16, 10)
    assert main(["run", "--config", str(cfg_path), "--sampler", "naive"]) == 0
    text = capsys.readouterr().out
    assert text.startswith(CSV_HEADER) and text.splitlines()[1].endswith(",0,0")


def test_cli_sweep_rows(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(tiny_cfg(seasons=2).to_json())
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(cfg_path), "--r-list", "10,80", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()[1:]
    assert len(rows) == 2 * 2
    assert [row.split(",")[3] for row in rows] == ["10", "10", "80", "80"]
    assert main(["sweep", "--config", str(cfg_path), "--r-list", "ten"]) == 1


def test_demo_is_quick(capsys):
    t0 = time.time()
    assert main(["demo"]) == 0
    assert time.time() - t0 < 60
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 10 and lines[0].startswith("generation  1")
    assert demo_config().world.n_classes == 10


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--models", "5"]) == 0
    assert "ok" in capsys.readouterr().out
    assert main(["gradcheck", "--models", "2", "--tol", "0"]) == 2


def test_serve_and_connect_end_to_end(tmp_path, capsys):
    teacher = init_mlp(MlpConfig(20, 20, (16,), seed=3))
    model_path = tmp_path / "teacher.bin"
    save_mlp(teacher, model_path)
    proc = subprocess.Popen([sys.executable, "-m", "dfrd.cli", "serve", "--model", str(model_path),
                             "--listen", "127.0.0.1:0", "--max-connections", "1"],
                            stdout=subprocess.PIPE, text=True)
    try:
        banner = proc.stdout.readline()
        addr = banner.rsplit(" ", 1)[1].strip()
        export = tmp_path / "pseudo.jsonl"
        assert main(["connect", "--addr", addr, "--classes", "20", "--m", "1",
                     "--save-student", str(tmp_path / "student.bin"),
                     "--export", str(export)]) == 0
        out, _ = proc.communicate(timeout=30)
    finally:
        proc.kill()
    assert proc.returncode == 0
    assert "answered 100 queries in 1 sessions" in out
    assert "received 100 answers" in capsys.readouterr().out
    xs, ys = read_rrf_records(export, 20)
    assert len(xs) == 100
    from dfrd.kt import blackbox_answer
    assert ys == [blackbox_answer(teacher, x)[0] for x in xs]
    assert main(["connect", "--addr", addr, "--classes", "20"]) == 2
