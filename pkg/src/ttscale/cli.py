"""Command-line entry point: generate, evaluate, curate, simulate, report.

Exit codes: 0 success, 1 validation error, 2 backend or I/O failure. Every
run writes a manifest recording config, seed, package version, and input
digests; outputs carry no timestamps, so identical invocations produce
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .aggregation import acc_maj_at
from .core import (
    BackendError,
    Candidate,
    HarnessError,
    Problem,
    RunConfig,
    ValidationError,
    config_from_dict,
    load_config,
    load_problems,
    read_candidates,
    sha256_file,
    write_candidates,
)
from .curation import CurationConfig, curate
from .generation import (
    HttpBackend,
    MockBackend,
    RoundPolicy,
    final_round_pool,
    generate_multi_round,
    load_mock_distributions,
)
from .metrics import AccuracyCurve, build_report, min_n_to_threshold
from .simulate import exact_maj_accuracy, load_distributions, mc_maj_accuracy, scaling_curve

API_KEY_ENV = "TTS_API_KEY"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _schedule(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad schedule {value!r}") from exc


def _write_manifest(out_dir: Path, command: str, config: dict, seed: Optional[int],
                    inputs: dict, outputs: Sequence[str], extra: Optional[dict] = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "input_digests": {name: sha256_file(path) for name, path in sorted(inputs.items())},
        "output_digests": {name: sha256_file(out_dir / name) for name in sorted(outputs)},
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_config_from_args(args) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for flag, field in [
        ("n_schedule", "n_schedule"), ("temperature", "temperature"),
        ("max_tokens", "max_new_tokens"), ("top_p", "top_p"), ("seed", "seed"),
        ("parallelism", "parallelism"), ("backend", "backend"),
        ("threshold", "threshold"), ("subsample_rounds", "subsample_rounds"),
    ]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    merged = {**base.__dict__, **overrides}
    return config_from_dict(merged)


def _make_backend(args, cfg: RunConfig):
    if cfg.backend == "mock":
        if not args.dist:
            raise ValidationError("mock backend requires --dist")
        base, overrides = load_mock_distributions(args.dist)
        return MockBackend(base, overrides)
    if not args.base_url or not args.model:
        raise ValidationError("http backend requires --base-url and --model")
    return HttpBackend(
        base_url=args.base_url, model=args.model,
        api_key=os.environ.get(API_KEY_ENV, ""),
    )


def cmd_generate(args) -> int:
    cfg = _run_config_from_args(args)
    problems = load_problems(args.problems)
    backend = _make_backend(args, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidates_path = out_dir / "candidates.jsonl"
    existing: list[Candidate] = []
    done: dict[str, set[int]] = {}
    if candidates_path.exists():
        existing = read_candidates(candidates_path)
        for c in existing:
            done.setdefault(c.problem_id, set()).add(c.sample_index)
        _say(args, f"resuming: {len(existing)} candidates already present")
    policy = RoundPolicy(rounds=args.rounds)
    pool: list[Candidate] = list(existing)
    failures = 0
    for problem in problems:
        have = done.get(problem.id, set())
        if len(have) >= cfg.pool_size and args.rounds == 1:
            continue
        if args.rounds == 1:
            from .generation import generate_pool

            fresh = generate_pool(problem, cfg.pool_size, cfg, backend, skip=have)
        else:
            fresh = generate_multi_round(problem, cfg.pool_size, policy, cfg, backend)
            fresh = [c for c in fresh if not (c.round == 1 and c.sample_index in have)]
        failures += sum(1 for c in fresh if not c.text)
        pool.extend(fresh)
        _say(args, f"generated {problem.id}: pool size {cfg.pool_size}")
    write_candidates(pool, candidates_path)
    config_dict = {**cfg.__dict__, "n_schedule": list(cfg.n_schedule), "rounds": args.rounds}
    inputs = {"problems": args.problems}
    if args.dist:
        inputs["dist"] = args.dist
    _write_manifest(out_dir, "generate", config_dict, cfg.seed, inputs, ["candidates.jsonl"])
    if failures:
        print(f"error: {failures} samples failed after retries; partial pool kept",
              file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def _curves_and_costs(problems: list[Problem], pool: list[Candidate],
                      cfg: RunConfig, label: str):
    by_problem: dict[str, list[Candidate]] = {}
    for c in final_round_pool(pool):
        by_problem.setdefault(c.problem_id, []).append(c)
    for pid, candidates in by_problem.items():
        candidates.sort(key=lambda c: c.sample_index)
    sizes = {len(v) for v in by_problem.values()}
    if not sizes:
        raise ValidationError("candidates file holds no pools")
    pool_size = min(sizes)
    if cfg.pool_size > pool_size:
        raise ValidationError(
            f"schedule max {cfg.pool_size} exceeds available pool size {pool_size}"
        )
    estimates = [
        acc_maj_at(problems, by_problem, n, cfg.subsample_rounds, cfg.seed)
        for n in cfg.n_schedule
    ]
    costs = {
        n: sum(sum(c.token_count for c in v[:n]) for v in by_problem.values())
        for n in cfg.n_schedule
    }
    curve = AccuracyCurve(points={e.n: e.mean_acc for e in estimates}, model_label=label)
    return by_problem, estimates, costs, curve


def cmd_evaluate(args) -> int:
    cfg = _run_config_from_args(args)
    problems = load_problems(args.problems)
    pool = read_candidates(args.candidates)
    label = args.model or "model"
    by_problem, estimates, costs, curve = _curves_and_costs(problems, pool, cfg, label)
    report = build_report(
        [curve], pools={label: by_problem}, threshold=cfg.threshold,
        costs={label: costs},
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n", "acc", "stderr", "method", "cost_tokens"])
        for e in estimates:
            writer.writerow([label, e.n, e.mean_acc, e.stderr, e.method, costs[e.n]])
    _write_plot_csv(out_dir / "plot.csv", report)
    _write_manifest(
        out_dir, "evaluate",
        {**cfg.__dict__, "n_schedule": list(cfg.n_schedule), "model_label": label},
        cfg.seed,
        {"problems": args.problems, "candidates": args.candidates},
        ["report.json", "metrics.csv", "plot.csv"],
    )
    _say(args, f"evaluated {label}: acc@{estimates[-1].n} = {estimates[-1].mean_acc:.4f}")
    return EXIT_OK


def _write_plot_csv(path: Path, report: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n", "log2_n", "acc"])
        for row in report["plot"]:
            writer.writerow([row["model"], row["n"], row["log2_n"], row["acc"]])


def cmd_curate(args) -> int:
    cfg = CurationConfig(
        mixture_ratio=args.ratio if args.ratio is not None else CurationConfig.mixture_ratio,
        prefix_token_limit=(
            args.prefix_tokens if args.prefix_tokens is not None
            else CurationConfig.prefix_token_limit
        ),
        seed=args.seed if args.seed is not None else 0,
        tokenizer=args.tokenizer,
        truncate_joint=args.truncate_joint,
    ).validate()
    if cfg.mixture_ratio == 1.0 and args.target:
        print("warning: ratio 1.0 ignores the target source", file=sys.stderr)
    target = args.target if cfg.mixture_ratio < 1.0 else None
    manifest = curate(args.diverse, target, cfg, args.out)
    counts = manifest["counts"]
    _say(args, f"curated {counts['total']} records "
               f"({counts['diverse']} diverse / {counts['target']} target), "
               f"split {counts['train']}/{counts['eval']}/{counts['held_out']}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    dists = load_distributions(args.dist)
    result: dict = {"mode": args.mode, "seed": args.seed}
    per_problem: dict = {}
    for pid in sorted(dists):
        dist = dists[pid]
        if args.mode == "exact":
            per_problem[pid] = exact_maj_accuracy(dist, args.n)
            result["n"] = args.n
        elif args.mode == "mc":
            per_problem[pid] = mc_maj_accuracy(dist, args.n, args.trials, args.seed or 0)
            result["n"] = args.n
            result["trials"] = args.trials
        else:
            schedule = args.n_schedule or RunConfig().n_schedule
            per_problem[pid] = {str(n): acc for n, acc in scaling_curve(dist, list(schedule)).items()}
            result["n_schedule"] = list(schedule)
    result["per_problem"] = per_problem
    if args.mode == "exact":
        values = list(per_problem.values())
        result["mean"] = sum(values) / len(values)
    payload = json.dumps(result, indent=2) + "\n"
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "simulate.json").write_text(payload, encoding="utf-8")
        _write_manifest(out_dir, "simulate", {"mode": args.mode, "n": getattr(args, "n", None)},
                        args.seed, {"dist": args.dist}, ["simulate.json"])
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_report(args) -> int:
    merged_curves: list[AccuracyCurve] = []
    inputs = {}
    costs_by_model: dict = {}
    for path in args.reports:
        inputs[path] = path
        with open(path, "r", encoding="utf-8") as fh:
            report = json.load(fh)
        for label, entry in report.get("models", {}).items():
            if any(c.model_label == label for c in merged_curves):
                raise ValidationError(f"duplicate model label {label!r} across reports")
            merged_curves.append(AccuracyCurve(
                points={int(n): acc for n, acc in entry["curve"].items()},
                model_label=label,
            ))
            if "costs" in entry:
                costs_by_model[label] = {int(n): v for n, v in entry["costs"].items()}
    if not merged_curves:
        raise ValidationError("no model curves found in the given reports")
    merged = build_report(merged_curves, threshold=args.threshold,
                          costs=costs_by_model or None)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "merged.json", "w", encoding="utf-8") as fh:
        json.dump(merged, fh, indent=2)
        fh.write("\n")
    table_ns = (2, 16, 256)
    with open(out_dir / "table.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model"] + [f"acc_maj@{n}" for n in table_ns] + ["min_n"])
        for curve in sorted(merged_curves, key=lambda c: c.model_label):
            min_n = min_n_to_threshold(curve, args.threshold)
            writer.writerow(
                [curve.model_label]
                + [curve.points.get(n, "") for n in table_ns]
                + [min_n if min_n is not None else "inf"]
            )
    with open(out_dir / "gains.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "from_n", "to_n", "gain_pp"])
        for curve in sorted(merged_curves, key=lambda c: c.model_label):
            points = curve.sorted_points()
            for (a, acc_a), (b, acc_b) in zip(points, points[1:]):
                writer.writerow([curve.model_label, a, b, (acc_b - acc_a) * 100.0])
    _write_plot_csv(out_dir / "plot.csv", merged)
    _write_manifest(out_dir, "report", {"threshold": args.threshold}, None, inputs,
                    ["merged.json", "table.csv", "gains.csv", "plot.csv"])
    _say(args, f"merged {len(merged_curves)} model curve(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttscale",
        description="Best-of-N test-time scaling harness",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output on stderr")
        p.add_argument("--seed", type=int, default=None)

    gen = sub.add_parser("generate", help="sample candidate pools per problem")
    common(gen)
    gen.add_argument("--problems", required=True)
    gen.add_argument("--backend", choices=["mock", "http"], default="mock")
    gen.add_argument("--dist", help="answer distribution file for the mock backend")
    gen.add_argument("--base-url", dest="base_url")
    gen.add_argument("--model")
    gen.add_argument("--n-schedule", dest="n_schedule", type=_schedule)
    gen.add_argument("--temperature", type=float)
    gen.add_argument("--max-tokens", dest="max_tokens", type=int)
    gen.add_argument("--top-p", dest="top_p", type=float)
    gen.add_argument("--parallelism", type=int)
    gen.add_argument("--rounds", type=int, default=1,
                     help="refinement rounds (1 = plain best-of-N)")
    gen.add_argument("--config", help="JSON run-config file; flags override it")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate", help="score pools and build the report")
    common(ev)
    ev.add_argument("--problems", required=True)
    ev.add_argument("--candidates", required=True)
    ev.add_argument("--model", help="model label for the report")
    ev.add_argument("--n-schedule", dest="n_schedule", type=_schedule)
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--subsample-rounds", dest="subsample_rounds", type=int)
    ev.add_argument("--config", help="JSON run-config file; flags override it")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    cur = sub.add_parser("curate", help="build the fine-tuning dataset")
    common(cur)
    cur.add_argument("--diverse", required=True, help="diverse-source JSONL")
    cur.add_argument("--target", help="target-source JSONL")
    cur.add_argument("--ratio", type=float, help="diverse-source fraction")
    cur.add_argument("--prefix-tokens", dest="prefix_tokens", type=int)
    cur.add_argument("--tokenizer", default="whitespace",
                     help='"whitespace" or "http:<truncation service URL>"')
    cur.add_argument("--truncate-joint", dest="truncate_joint", action="store_true",
                     help="budget prompt+completion jointly")
    cur.add_argument("--out", required=True)
    cur.set_defaults(func=cmd_curate)

    sim = sub.add_parser("simulate", help="exact or MC vote accuracy for distributions")
    common(sim)
    sim.add_argument("mode", choices=["exact", "mc", "curve"])
    sim.add_argument("--dist", required=True)
    sim.add_argument("--n", type=int, default=3)
    sim.add_argument("--trials", type=int, default=10_000)
    sim.add_argument("--n-schedule", dest="n_schedule", type=_schedule)
    sim.add_argument("--out")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="merge evaluation reports across models")
    common(rep)
    rep.add_argument("reports", nargs="+", help="report.json files to merge")
    rep.add_argument("--threshold", type=float, default=0.80)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ValidationError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
