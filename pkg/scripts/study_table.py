"""Max / mean / median arch PSNR for each method on one degradation and op set.

    python3 scripts/study_table.py --degradation blur --opset all --trials 25

Each study is exported under --output-dir (CSV, JSON lines, summary, scatter).
Use --epochs to shrink the schedule for a quick look.
"""
import argparse
import dataclasses

from dasinv import harness
from dasinv.baselines import BudgetPolicy
from dasinv.engine import PRESETS, TrainSchedule
from dasinv.runtime import tune_allocator
from dasinv.signals import CosineConfig, make_operator
from dasinv.spaces import SpaceSpec

ROWS = (("das", None), ("random-search", None), ("random", None), ("fixed-op", "Net"), ("fixed-op", "LG"))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--degradation", default="blur", choices=("blur", "downsample"))
    p.add_argument("--opset", default="all")
    p.add_argument("--hp", default="h1", choices=sorted(PRESETS))
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--output-dir", default="runs/table")
    args = p.parse_args()
    tune_allocator()

    op = make_operator(args.degradation)
    spec = SpaceSpec.sequential(args.opset)
    sched = TrainSchedule().scaled_to(args.epochs)
    print(f"{'method':<16}{'max':>8}{'mean':>8}{'median':>8}{'fail':>6}")
    for method, kind in ROWS:
        if kind is not None and kind not in [k.mnemonic for k in spec.opset]:
            continue
        label = method if kind is None else f"{method}:{kind}"
        stem = f"{label.replace(':', '-')}-{args.degradation}-{args.opset}".replace(",", "+")
        records = harness.run_study(method, spec, op, PRESETS[args.hp], args.trials, parallelism=args.parallelism,
                                    study=stem, hp_label=args.hp, sched=sched, cfg=CosineConfig(),
                                    budget=BudgetPolicy(), fixed_kind=kind)
        s = harness.summarize(records)
        harness.export(records, args.output_dir, stem, s)
        print(f"{label:<16}{s.max:8.2f}{s.mean:8.2f}{s.median:8.2f}{s.failures:6d}")
    print(f"schedule: {dataclasses.asdict(sched)}")


if __name__ == "__main__":
    main()
