"""Pearson r and regression line of arch PSNR against one-shot PSNR for a study.

    python3 scripts/correlation_scatter.py runs/das-blur-sequential-all.jsonl

Writes the (one-shot, arch) pairs next to the input as ``<stem>.scatter.csv``
and prints r, slope and intercept.
"""
import argparse
from pathlib import Path

from dasinv import harness


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("input", type=Path, help="JSON-lines study export")
    args = p.parse_args()

    records = harness.read_jsonl(args.input)
    pairs = harness.scatter_pairs(records)
    stem = args.input.name.removesuffix(".jsonl")
    out = harness.write_scatter(records, args.input.with_name(f"{stem}.scatter.csv"))
    if len(pairs) < 2:
        print(f"{len(pairs)} usable pairs; correlation undefined")
        return
    fit = harness.pearson_linreg([x for x, _ in pairs], [y for _, y in pairs])
    print(f"pairs {len(pairs)}  r {fit.r:.3f}  slope {fit.slope:.3f}  intercept {fit.intercept:.3f}")
    print(f"wrote scatter: {out}")


if __name__ == "__main__":
    main()
