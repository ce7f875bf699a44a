"""Command-line front end.

Commands: gen-data, train, solve, transfer, gridsearch, benchmark,
serve-mock.  Every command reads one config file (TOML or JSON); flags
override file values.  Exit codes: 0 success, 1 usage or config error,
2 runtime failure.

Output layout under the configured directory:
  manifest.json  instances/  schedules/  traces/  benchmark.csv
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .benchmark import (
    DatasetSpec,
    Method,
    generate_instance,
    load_instance,
    read_pbm,
    save_instance,
    write_metric_csv,
    evaluate_methods,
)
from .config import ConfigError, RunConfig, load_config, write_manifest
from .mock_server import load_fixture, serve_mock
from .problems import PenaltyParams, load_problem
from .solver import StepSchedule, grid_search_step, ohzeki_run
from .training import load_schedule, save_schedule, train, transfer_execute

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_set(values: list[str]) -> dict:
    out = {}
    for item in values:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = _parse_set(getattr(args, "set", []) or [])
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output.directory"] = args.out
    return cfg.with_overrides(overrides) if overrides else cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_spec(cfg: RunConfig) -> DatasetSpec:
    b = cfg.benchmark
    gt = None
    if b.ground_truth:
        bits, w, h = read_pbm(b.ground_truth)
        if (w, h) != (b.width, b.height):
            raise ConfigError(
                f"ground truth image is {w}x{h}, config says {b.width}x{b.height}"
            )
        gt = bits
    return DatasetSpec(b.width, b.height, b.m_ratio, b.count, cfg.seed, gt)


def _load_dataset(cfg: RunConfig, out: Path) -> list:
    src = Path(cfg.training.dataset) if cfg.training.dataset else out / "instances"
    if not src.is_dir():
        raise ConfigError(f"dataset directory not found: {src} (run gen-data first)")
    paths = sorted(src.glob("*.json"))
    if not paths:
        raise ConfigError(f"no instance files in {src}")
    return [load_instance(p) for p in paths]


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    spec = _dataset_spec(cfg)
    inst_dir = out / "instances"
    inst_dir.mkdir(exist_ok=True)
    files = []
    for i in range(spec.count):
        inst, problem = generate_instance(spec, i)
        path = inst_dir / f"instance_{i:04d}.json"
        save_instance(inst, problem, path)
        files.append(str(path.relative_to(out)))
    write_manifest(cfg, "gen-data", out, files)
    print(f"wrote {spec.count} instances ({spec.n_vars} vars, {spec.n_measurements} constraints) to {inst_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    dataset = [problem for _, problem in _load_dataset(cfg, out)]
    sched = train(dataset, cfg.train_config())
    sched_dir = out / "schedules"
    sched_dir.mkdir(exist_ok=True)
    sched_path = sched_dir / "schedule.json"
    save_schedule(sched, sched_path)
    curve_path = sched_dir / "loss_curve.csv"
    with open(curve_path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        for e, loss in enumerate(sched.loss_curve):
            fh.write(f"{e},{loss!r}\n")
    write_manifest(
        cfg, "train", out, [str(p.relative_to(out)) for p in (sched_path, curve_path)]
    )
    print(f"trained schedule of depth {sched.T} with {cfg.sampler.kind}; wrote {sched_path}")
    return 0


def _load_problem_maybe_instance(path: Path):
    data = json.loads(path.read_text())
    if "x_star" in data:
        from .benchmark import instance_from_dict

        inst, problem = instance_from_dict(data)
        return problem, inst.x_star
    return load_problem(path), None


def _run_solve(args, transfer: bool) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    instance_path = Path(args.instance or cfg.problem.instance or "")
    if not str(instance_path):
        raise ConfigError("no instance file given (problem.instance or --instance)")
    if not instance_path.exists():
        raise ConfigError(f"instance file not found: {instance_path}")
    problem, x_star = _load_problem_maybe_instance(instance_path)
    sampler = cfg.sampler.build(cfg.seed)
    params = PenaltyParams(cfg.problem.lam, cfg.sampler.beta)
    if transfer:
        sched_path = Path(args.schedule or cfg.problem.schedule or "")
        if not str(sched_path):
            raise ConfigError("transfer needs a schedule file (problem.schedule or --schedule)")
        sched = load_schedule(sched_path)
        result = transfer_execute(sched, problem, sampler, params, ground_truth=x_star)
    else:
        T = args.iterations if args.iterations is not None else cfg.training.T
        eta = args.eta if args.eta is not None else cfg.training.eta_init
        schedule = StepSchedule.constant(eta, T)
        result = ohzeki_run(
            problem, schedule=schedule, sampler=sampler, params=params, ground_truth=x_star
        )
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    stem = instance_path.stem
    trace_path = traces / f"{stem}_trace.csv"
    result.trace.write_csv(trace_path)
    summary = {
        "label": result.label or f"constant-{cfg.sampler.kind}",
        "best_loss": result.best_loss,
        "best_x": result.best_x.tolist(),
        "final_v": result.final_v.v.tolist(),
        "iterations": len(result.trace.records) - 1,
    }
    if x_star is not None:
        summary["final_best_mse"] = result.trace.records[-1].best_mse
    result_path = traces / f"{stem}_result.json"
    result_path.write_text(json.dumps(summary, indent=1) + "\n")
    command = "transfer" if transfer else "solve"
    write_manifest(
        cfg, command, out, [str(p.relative_to(out)) for p in (trace_path, result_path)]
    )
    print(f"{summary['label']}: best loss {result.best_loss:.6g}", end="")
    if x_star is not None:
        print(f", final best MSE {summary['final_best_mse']:.6g}")
    else:
        print()
    return 0


def cmd_solve(args) -> int:
    return _run_solve(args, transfer=False)


def cmd_transfer(args) -> int:
    return _run_solve(args, transfer=True)


def cmd_gridsearch(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    pairs = [(problem, inst.x_star) for inst, problem in _load_dataset(cfg, out)]
    sampler = cfg.sampler.build(cfg.seed)
    params = PenaltyParams(cfg.problem.lam, cfg.sampler.beta)
    best_eta, table = grid_search_step(
        pairs, cfg.benchmark.eta_candidates, params, sampler, cfg.training.T
    )
    path = out / "gridsearch.csv"
    with open(path, "w") as fh:
        fh.write("eta,mean_final_best_mse,mean_iterations_to_zero\n")
        for row in table:
            fh.write(
                f"{row['eta']!r},{row['mean_final_best_mse']!r},"
                f"{row['mean_iterations_to_zero']!r}\n"
            )
    write_manifest(cfg, "gridsearch", out, [str(path.relative_to(out))])
    print(f"best constant step size: {best_eta!r} (table in {path})")
    return 0


def _build_methods(cfg: RunConfig):
    """Method entries may override any [sampler] key, e.g. a per-method kind."""
    import dataclasses as dc

    methods = []
    for spec in cfg.benchmark.methods:
        spec = dict(spec)
        label = spec.pop("label")
        schedule = spec.pop("schedule", None)
        eta = spec.pop("eta", None)
        try:
            section = dc.replace(cfg.sampler, **spec)
        except TypeError as e:
            raise ConfigError(f"method {label!r} has unknown sampler overrides: {e}") from e
        sampler = section.build(cfg.seed)
        sched = load_schedule(schedule) if schedule is not None else float(eta)
        methods.append((Method(label, sched, sampler), section.beta))
    return methods


def cmd_benchmark(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg)
    instances = _load_dataset(cfg, out)
    methods = _build_methods(cfg)
    if not methods:
        raise ConfigError("no benchmark methods configured")
    betas = {beta for _, beta in methods}
    if len(betas) != 1:
        raise ConfigError("benchmark methods must share one beta per run")
    params = PenaltyParams(cfg.problem.lam, betas.pop())
    series = evaluate_methods(instances, [m for m, _ in methods], params, cfg.training.T)
    csv_path = out / "benchmark.csv"
    write_metric_csv(series, csv_path)
    lines = [
        f"{'method':<16} {'median_iters_to_zero':>20} {'final_mean_best_mse':>20} {'final_frac_solved':>18}"
    ]
    for label, s in series.items():
        lines.append(
            f"{label:<16} {s.median_iterations_to_zero:>20.6g} "
            f"{float(s.mean_best_mse[-1]):>20.6g} {float(s.frac_solved[-1]):>18.3f}"
        )
    summary = "\n".join(lines)
    summary_path = out / "benchmark_summary.txt"
    summary_path.write_text(summary + "\n")
    write_manifest(
        cfg, "benchmark", out, [str(p.relative_to(out)) for p in (csv_path, summary_path)]
    )
    print(summary)
    return 0


def cmd_serve_mock(args) -> int:
    cfg = _load_cfg(args)
    fixture = load_fixture(args.fixture) if args.fixture else None
    sampler_config = cfg.sampler.sampler_config(cfg.seed)
    server = serve_mock(args.port, args.mode, fixture, sampler_config)
    print(f"mock annealer ({args.mode}) listening on {server.endpoint}")
    try:
        server._thread.join()
    except KeyboardInterrupt:
        print("shutting down")
        server.stop()
    return 0


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", required=config_required, help="TOML or JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config value by dotted path, e.g. --set sampler.kind=sqa",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="duom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate benchmark instances")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a step-size schedule")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="solve one instance with a constant step size")
    _add_common(p)
    p.add_argument("--instance", default=None, help="instance or problem JSON file")
    p.add_argument("--eta", type=float, default=None, help="constant step size")
    p.add_argument("--iterations", type=int, default=None, help="number of iterations")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("transfer", help="solve one instance with a trained schedule")
    _add_common(p)
    p.add_argument("--instance", default=None, help="instance or problem JSON file")
    p.add_argument("--schedule", default=None, help="trained schedule JSON file")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("gridsearch", help="grid search a constant step size")
    _add_common(p)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("benchmark", help="compare methods on the instance set")
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("serve-mock", help="serve a mock annealer endpoint")
    _add_common(p, config_required=False)
    p.add_argument("--port", type=int, default=8431)
    p.add_argument("--mode", choices=("fixed", "proxy-mh"), default="proxy-mh")
    p.add_argument("--fixture", default=None, help="fixture JSON (fixed mode)")
    p.set_defaults(func=cmd_serve_mock)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failures
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
