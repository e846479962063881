"""Command-line entry point: ``dfrd {run,sweep,serve,connect,gradcheck,demo}``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import DfrdError
from .evaluation import format_csv, plot_generation_curves, sweep_r, write_report_csv
from .kt import LocalTeacher, export_pseudo_dataset, kt_session, read_rrf_records
from .mlp import MlpConfig, TrainConfig, init_mlp, load_mlp, save_mlp
from .samplers import SamplerSpec, default_r_values
from .scenario import ExperimentConfig, WorldConfig, run_experiment
from .transport import TeacherServer, connect, parse_addr

log = logging.getLogger("dfrd")

DEFAULT_LISTEN = "127.0.0.1:7878"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_experiment_flags(p):
    p.add_argument("--config", help="scenario config JSON (config_version 1)")
    p.add_argument("--seed", type=int, help="world seed (overrides config)")
    p.add_argument("--seasons", type=int, help="number of seasons/generations")
    p.add_argument("--classes", type=int, help="number of place classes")
    p.add_argument("--m", type=int, help="oracle queries per teacher, in hundreds")
    p.add_argument("--replicas", type=int, default=1,
                   help="independent runs with seeds seed, seed+1, ...")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--plot", action="store_true",
                   help="also render an SVG line chart next to the CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dfrd", description="Data-free recursive distillation simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run one recursive-distillation experiment")
    _add_experiment_flags(run)
    run.add_argument("--sampler", choices=["oracle", "naive", "regularized", "mixed"])
    run.add_argument("--random-kind", choices=["naive", "regularized"])
    run.add_argument("--r", type=int, help="random queries per 100 oracle queries (implies mixed)")
    run.add_argument("--save-student", help="write the final student model to this path")

    sweep = sub.add_parser("sweep", help="run the experiment for each mixing ratio r")
    _add_experiment_flags(sweep)
    sweep.add_argument("--r-list", help="comma-separated r values (default 10*2^i, i=0..10)")
    sweep.add_argument("--random-kind", choices=["naive", "regularized"], default="regularized")
    sweep.add_argument("--workers", type=int, default=1)

    serve = sub.add_parser("serve", help="serve a saved model as a black-box teacher")
    serve.add_argument("--model", required=True)
    serve.add_argument("--listen", default=DEFAULT_LISTEN, help="host:port")
    serve.add_argument("--soft", action="store_true", help="include k-hot soft answers")
    serve.add_argument("--max-connections", type=int,
                       help="exit after this many sessions (default: serve forever)")

    conn = sub.add_parser("connect", help="distill a student from a remote teacher")
    conn.add_argument("--addr", required=True, help="teacher host:port")
    conn.add_argument("--classes", type=int, default=100)
    conn.add_argument("--k", type=int, default=10)
    conn.add_argument("--pool", help="JSON-lines oracle pool of {\"x\": [...]} records")
    conn.add_argument("--r", type=int, default=100,
                      help="random queries per 100 oracle queries (pure random without --pool)")
    conn.add_argument("--m", type=int, default=10)
    conn.add_argument("--seed", type=int, default=0)
    conn.add_argument("--save-student", help="write the distilled student here")
    conn.add_argument("--export", help="write the pseudo-dataset as JSON lines")

    grad = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    grad.add_argument("--models", type=int, default=20)
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--tol", type=float, default=1e-4)

    demo = sub.add_parser("demo", help="tiny 10-class world, prints per-generation Top-1")
    demo.add_argument("--seed", type=int, default=0)
    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    world = {}
    if args.seed is not None:
        world["seed"] = args.seed
    if args.seasons is not None:
        world["n_seasons"] = args.seasons
    if args.classes is not None:
        world["n_classes"] = args.classes
    sampler = {}
    if args.m is not None:
        sampler["m"] = args.m
    kind = getattr(args, "sampler", None)
    r = getattr(args, "r", None)
    random_kind = getattr(args, "random_kind", None)
    if kind == "oracle":
        if r is not None:
            raise UsageError("--r cannot be combined with --sampler oracle")
        sampler.update(kind="oracle", r=0)
    elif kind in ("naive", "regularized"):
        if r is None:
            sampler.update(kind=f"{kind}_random")
        else:
            sampler.update(kind="mixed", r=r, random_kind=kind)
    elif kind == "mixed" or r is not None:
        sampler["kind"] = "mixed"
        if r is not None:
            sampler["r"] = r
    if random_kind is not None and kind not in ("naive", "regularized"):
        sampler["random_kind"] = random_kind
    try:
        return replace(cfg, world=replace(cfg.world, **world),
                       sampler=replace(cfg.sampler, **sampler))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(reports, args, title):
    text = format_csv(reports)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_report_csv(reports, args.out)
        if args.plot:
            svg = Path(args.out).with_suffix(".svg")
            plot_generation_curves(reports, svg, title=title)
            print(f"figure written to {svg}", file=sys.stderr)
    else:
        sys.stdout.write(text)
        if args.plot:
            raise UsageError("--plot needs --out")


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    if args.replicas < 1:
        raise UsageError("--replicas must be >= 1")
    reports = []
    final = None
    for rep in range(args.replicas):
        rcfg = replace(cfg, world=replace(cfg.world, seed=cfg.world.seed + rep))
        reps, final = run_experiment(rcfg, return_state=True)
        reports.extend(reps)
    if args.save_student:
        save_mlp(final.student, args.save_student)
    _emit(reports, args, f"sampler={cfg.sampler.kind}, r={cfg.sampler.effective_r}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    if args.r_list:
        try:
            r_list = [int(v) for v in args.r_list.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --r-list {args.r_list!r}") from None
    else:
        r_list = default_r_values()
    reports = []
    for rep in range(args.replicas):
        rcfg = replace(cfg, world=replace(cfg.world, seed=cfg.world.seed + rep))
        result = sweep_r(rcfg, r_list, random_kind=args.random_kind, workers=args.workers,
                         callback=lambda row: log.info("r=%d done: final top1=%.4f",
                                                       row.r, row.final_top1))
        reports.extend(result.reports)
    _emit(reports, args, f"{args.random_kind} random sampler, 100:r mixing")
    return 0


def cmd_serve(args) -> int:
    model = load_mlp(args.model)
    host, port = parse_addr(args.listen)
    with TeacherServer(model, (host, port), soft=args.soft) as server:
        print(f"serving {args.model} on {server.address}", flush=True)
        try:
            if args.max_connections is None:
                server.serve_forever()
            else:
                server.daemon_threads = False  # so closing the server waits for the sessions
                for _ in range(args.max_connections):
                    server.handle_request()
        except KeyboardInterrupt:
            pass
    total = sum(s.queries_answered for s in server.summaries)
    print(f"answered {total} queries in {len(server.summaries)} sessions")
    return 0


def cmd_connect(args) -> int:
    n = args.classes
    pool = None
    if args.pool:
        pool, _ = read_rrf_records(args.pool, n)
        spec = SamplerSpec(kind="mixed", r=args.r, random_kind="regularized",
                           seed=args.seed, m=args.m)
    else:
        spec = SamplerSpec(kind="regularized_random", seed=args.seed, m=args.m)
    student = init_mlp(MlpConfig(n, n, seed=args.seed))
    with connect(args.addr, n, n, args.k, teacher_id="remote") as teacher:
        student, datasets = kt_session(student, [teacher], {"remote": pool}, spec,
                                       TrainConfig(step_size=0.1, shuffle_seed=args.seed),
                                       k=args.k)
        asked = teacher.calls
    print(f"received {asked} answers; pseudo-dataset of {len(datasets[0])} samples")
    if args.save_student:
        save_mlp(student, args.save_student)
    if args.export:
        export_pseudo_dataset(datasets[0], args.export)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_random_models

    worst = check_random_models(args.models, seed=args.seed)
    status = "ok" if worst < args.tol else "FAILED"
    print(f"max relative error over {args.models} models: {worst:.3e} ({status}, tol {args.tol:g})")
    return 0 if worst < args.tol else 2


def demo_config(seed: int = 0) -> ExperimentConfig:
    world = WorldConfig(n_classes=10, n_seasons=10, experience_prob=0.3, seed=seed)
    return replace(ExperimentConfig(), world=world,
                   sampler=SamplerSpec(kind="mixed", r=10, m=2, seed=seed),
                   model=replace(ExperimentConfig().model, hidden_dims=(64,)))


def cmd_demo(args) -> int:
    t0 = time.time()

    def show(rep):
        print(f"generation {rep.generation:2d}  top1={rep.top1:.4f}  "
              f"known_classes={rep.cumulative_experienced}", flush=True)

    run_experiment(demo_config(args.seed), callback=show)
    print(f"done in {time.time() - t0:.1f}s", file=sys.stderr)
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "serve": cmd_serve, "connect": cmd_connect,
            "gradcheck": cmd_gradcheck, "demo": cmd_demo}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dfrd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DfrdError, OSError) as exc:
        print(f"dfrd {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
