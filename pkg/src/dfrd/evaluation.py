"""Metrics, CSV reports, r-sweeps and figures."""
from __future__ import annotations

import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .mlp import LabeledDataset, MlpModel, predict_top1
from .samplers import default_r_values
from .scenario import ExperimentConfig, GenerationReport, run_experiment

log = logging.getLogger(__name__)

CSV_HEADER = "generation,top1,cumulative_classes,r,seed"


def top1_accuracy(model: MlpModel, test: LabeledDataset) -> float:
    if len(test) == 0:
        raise InvalidInputError("empty test set")
    return float(np.mean(predict_top1(model, test.x) == test.y))


@dataclass
class SweepRow:
    r: int
    top1: list
    reports: list = field(default_factory=list)

    @property
    def final_top1(self) -> float:
        return self.top1[-1]


@dataclass
class SweepResult:
    rows: list

    def row(self, r: int) -> SweepRow:
        for row in self.rows:
            if row.r == r:
                return row
        raise KeyError(r)

    @property
    def reports(self) -> list:
        return [rep for row in self.rows for rep in row.reports]


def format_csv(reports: Sequence[GenerationReport]) -> str:
    if not reports:
        raise InvalidInputError("nothing to report")
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for rep in reports:
        buf.write(f"{rep.generation},{rep.top1:.6f},{rep.cumulative_experienced},"
                  f"{rep.sampler_spec.effective_r},{rep.seed}\n")
    return buf.getvalue()


def write_report_csv(reports, path) -> None:
    """One row per (generation, r); accepts reports or a :class:`SweepResult`."""
    if isinstance(reports, SweepResult):
        reports = reports.reports
    text = format_csv(list(reports))
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _sweep_point(args):
    cfg, r = args
    reports = run_experiment(cfg)
    return SweepRow(r, [rep.top1 for rep in reports], reports)


def sweep_configs(cfg: ExperimentConfig, r_list=None, random_kind: str = "regularized"):
    r_list = sorted(default_r_values() if r_list is None else r_list)
    if not r_list:
        raise InvalidInputError("r_list is empty")
    return [(replace(cfg, sampler=replace(cfg.sampler, kind="mixed", r=int(r),
                                          random_kind=random_kind)), int(r))
            for r in r_list]


def sweep_r(cfg: ExperimentConfig, r_list=None, random_kind: str = "regularized",
            workers: int = 1, callback=None) -> SweepResult:
    """Run the experiment once per mixing ratio; only ``r`` differs between rows."""
    jobs = sweep_configs(cfg, r_list, random_kind)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
        if callback is not None:
            for row in rows:
                callback(row)
    else:
        rows = []
        for job in jobs:
            row = _sweep_point(job)
            log.info("r=%d final top1=%.4f", row.r, row.final_top1)
            if callback is not None:
                callback(row)
            rows.append(row)
    return SweepResult(rows)


def plot_generation_curves(reports_or_sweep, path, title: str | None = None) -> None:
    """Top-1 accuracy against generation ID, one line per (r, seed).

    The file format follows the suffix of ``path`` (``.svg``, ``.png``, ...).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if isinstance(reports_or_sweep, SweepResult):
        reports = reports_or_sweep.reports
    else:
        reports = list(reports_or_sweep)
    series = {}
    for rep in reports:
        series.setdefault((rep.sampler_spec.effective_r, rep.seed), []).append(rep)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    cmap = plt.get_cmap("viridis", max(len(series), 2))
    for i, ((r, seed), reps) in enumerate(sorted(series.items())):
        gens = [rep.generation for rep in reps]
        label = f"r={r}" if len({s for _, s in series}) == 1 else f"r={r}, seed={seed}"
        ax.plot(gens, [100 * rep.top1 for rep in reps], marker="o", ms=3, lw=1.2,
                color=cmap(i), label=label)
    ax.set_xlabel("generation ID")
    ax.set_ylabel("Top-1 accuracy [%]")
    ax.set_xticks(sorted({rep.generation for rep in reports}))
    ax.set_ylim(bottom=0)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, ncol=2 if len(series) > 6 else 1, frameon=False)
    fig.tight_layout()
    # A fixed hash salt and no date stamp keep SVG output reproducible.
    with matplotlib.rc_context({"svg.hashsalt": "dfrd"}):
        fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)
