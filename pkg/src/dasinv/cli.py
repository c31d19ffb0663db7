"""Command-line entry point: ``dasinv <verb> [--config FILE] [--set key=value ...]``.

Exit status: 0 success, 1 experiment error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import harness
from .baselines import runs_to_beat
from .config import OUTPUT_DIR_ENV, ConfigError, Resolved, fixed_kind, load_config, parse_override, resolve
from .engine import train_architecture
from .hyperopt import Objective, hyperband_brackets, run_bohb
from .runtime import tune_allocator
from .spaces import DiscreteArch

VERBS = ("search", "retrain", "study", "baseline", "bohb", "report")
BASELINE_METHODS = ("random", "random-search", "fixed-op", "runs-to-beat")

# shortcut flag -> dotted config key
SHORTCUTS = {
    "opset": "space.opset",
    "space": "space.topology",
    "degradation": "data.degradation",
    "method": "method",
    "hp": "hp",
    "trials": "n_trials",
    "seed": "base_seed",
    "parallelism": "parallelism",
    "output_dir": "output_dir",
    "epochs": "schedule.epochs",
    "arch": "arch",
    "input": "input",
    "study": "study",
    "fixed_kind": "fixed_kind",
}


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dasinv", description="Differentiable architecture search for 1D inverse problems.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (dotted path, JSON value); repeatable")
    p.add_argument("--opset", help="all | good | comma-separated mnemonics")
    p.add_argument("--space", choices=("sequential", "cell"), help="search-space topology")
    p.add_argument("--degradation", choices=("blur", "downsample"))
    p.add_argument("--method")
    p.add_argument("--hp", help="hyperparameter preset name")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--output-dir", dest="output_dir", help=f"artifact directory (default ${OUTPUT_DIR_ENV} or ./runs)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--arch", help="architecture string for retrain, e.g. seq:LG,Net,...")
    p.add_argument("--input", help="JSON-lines study file for report")
    p.add_argument("--study", help="study name used for artifact file names")
    p.add_argument("--fixed-kind", dest="fixed_kind", choices=("LG", "Net"))
    return p


def _overrides(args: argparse.Namespace) -> list[dict]:
    out = [parse_override(s) for s in args.set]
    for flag, key in SHORTCUTS.items():
        value = getattr(args, flag)
        if value is not None:
            out.append(parse_override(f"{key}={json.dumps(value)}"))
    return out


def _check_combination(verb: str, r: Resolved) -> None:
    cfg = r.config
    if verb in ("search", "study") and cfg.method not in ("das", "das-single"):
        if verb == "search" or cfg.method == "runs-to-beat":
            raise UsageError(f"{verb} runs das or das-single, not {cfg.method!r}")
    if cfg.method == "das-single" and r.spec.topology != "sequential":
        raise UsageError("das-single needs the sequential space")
    if verb == "baseline" and cfg.method not in BASELINE_METHODS:
        raise UsageError(f"baseline method must be one of {', '.join(BASELINE_METHODS)}, got {cfg.method!r}")
    if cfg.method == "fixed-op" and cfg.fixed_kind is None:
        raise UsageError("fixed-op needs fixed_kind (LG or Net)")
    if cfg.method == "runs-to-beat" and cfg.runs_to_beat.threshold is None:
        raise UsageError("runs-to-beat needs runs_to_beat.threshold")
    if verb == "retrain":
        if not cfg.arch:
            raise UsageError("retrain needs an architecture (--arch)")
        try:
            DiscreteArch.from_string(cfg.arch, r.spec)
        except ValueError as exc:
            raise UsageError(f"bad architecture: {exc}") from exc
    if verb == "report" and not cfg.input:
        raise UsageError("report needs --input pointing at a JSON-lines study")
    if verb == "report" and not Path(cfg.input).is_file():
        raise UsageError(f"report input {cfg.input} does not exist")


def _echo(paths: dict[str, Path]) -> None:
    for kind, path in paths.items():
        print(f"wrote {kind}: {path}")


def _print_summary(summary: harness.StudySummary) -> None:
    print(json.dumps(summary.to_json(), indent=2))


def _run_study(r: Resolved, method: str) -> list[harness.TrialRecord]:
    return harness.run_study(method, r.spec, r.op, r.hp, r.config.n_trials, r.config.base_seed,
                             r.config.parallelism, study=r.study, hp_label=r.hp_label, sched=r.sched,
                             cfg=r.signals, budget=r.budget, fixed_kind=fixed_kind(r.config))


def _export_study(r: Resolved, records) -> None:
    for rec in records:
        print(json.dumps({k: v for k, v in rec.to_json().items() if k != "evaluations"}))
    ok = [rec for rec in records if not rec.failed]
    if ok:
        summary = harness.summarize(records)
        _print_summary(summary)
        _echo(harness.export(records, r.output_dir, r.study, summary))
    else:
        print(f"all {len(records)} trials failed", file=sys.stderr)
        _echo({"csv": harness.write_csv(records, r.output_dir / f"{r.study}.csv"),
               "jsonl": harness.write_jsonl(records, r.output_dir / f"{r.study}.jsonl")})


def cmd_search(r: Resolved) -> int:
    rec = harness.run_trial(harness.TrialTask(r.study, 0, harness.derive_seed(r.config.base_seed, 0),
                                              r.config.method, r.spec, r.op, r.hp, r.hp_label, r.sched,
                                              r.signals, r.budget, None))
    _export_study(r, [rec])
    return 0


def cmd_retrain(r: Resolved) -> int:
    arch = DiscreteArch.from_string(r.config.arch, r.spec)
    seed = harness.derive_seed(r.config.base_seed, 0)
    res = train_architecture(arch, r.op, r.hp, r.sched, np.random.default_rng(seed), r.signals)
    rec = harness.TrialRecord(r.study, 0, seed, "retrain", r.hp_label, r.spec.summary(), None,
                              None if res.failed else res.arch_psnr, str(arch), res.runtime, res.failed,
                              res.diagnostic)
    _export_study(r, [rec])
    return 0


def cmd_study(r: Resolved) -> int:
    _export_study(r, _run_study(r, r.config.method))
    return 0


def cmd_baseline(r: Resolved) -> int:
    if r.config.method != "runs-to-beat":
        _export_study(r, _run_study(r, r.config.method))
        return 0
    c = r.config.runs_to_beat
    res = runs_to_beat(r.spec, r.op, r.hp, c.threshold, c.repetitions, c.cap,
                       np.random.default_rng(r.config.base_seed), r.signals, r.sched)
    out = {"threshold": c.threshold, "mean": res.mean, "counts": res.counts, "censored": res.censored}
    print(json.dumps(out))
    path = r.output_dir / f"{r.study}.runs_to_beat.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2) + "\n")
    _echo({"runs_to_beat": path})
    return 0


def cmd_bohb(r: Resolved) -> int:
    b = r.config.bohb
    objective = Objective(b.objective, r.spec, r.op, r.sched, r.signals,
                          "das-single" if r.config.method == "das-single" else "das")
    brackets = hyperband_brackets(b.max_budget, b.eta, b.min_budget)
    log_path = r.output_dir / f"{r.study}.bohb.jsonl"
    res = run_bohb(objective, b.iterations, np.random.default_rng(r.config.base_seed), brackets=brackets,
                   base=r.hp, log_path=log_path, parallelism=r.config.parallelism)
    print(json.dumps({"best_score": res.best_score if res.best is not None else None,
                      "best": res.best.to_dict() if res.best is not None else None,
                      "evaluations": len(res.records)}, indent=2))
    _echo({"bohb_log": log_path})
    return 0 if res.best is not None else 1


def cmd_report(r: Resolved) -> int:
    src = Path(r.config.input)
    records = harness.read_jsonl(src)
    summary = harness.summarize(records)
    _print_summary(summary)
    stem = src.name[: -len(".jsonl")] if src.name.endswith(".jsonl") else src.stem
    out = harness.write_summary(summary, r.output_dir / f"{stem}.summary.json")
    _echo({"summary": out})
    return 0


COMMANDS = {
    "search": cmd_search,
    "retrain": cmd_retrain,
    "study": cmd_study,
    "baseline": cmd_baseline,
    "bohb": cmd_bohb,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_config(args.config, _overrides(args))
        resolved = resolve(cfg)
        _check_combination(args.verb, resolved)
    except (ConfigError, UsageError) as exc:
        print(f"dasinv: error: {exc}", file=sys.stderr)
        return 2
    tune_allocator()
    try:
        return COMMANDS[args.verb](resolved)
    except (OSError, RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"dasinv: {args.verb} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
