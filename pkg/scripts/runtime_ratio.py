"""Wall-clock of one DAS search against one fixed-architecture training.

    python3 scripts/runtime_ratio.py --reps 2

Run it on an otherwise idle machine; the reference is the mean of the
all-Net and all-LG trainings on the same sequential space.
"""
import argparse

import numpy as np

from dasinv.engine import PRESETS, TrainSchedule, das_search, train_architecture
from dasinv.ops import OperationKind
from dasinv.runtime import tune_allocator
from dasinv.signals import CosineConfig, make_operator
from dasinv.spaces import DiscreteArch, SpaceSpec


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int, default=2)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--epochs", type=int, default=50)
    args = p.parse_args()
    tune_allocator()

    op, cfg, hp = make_operator("blur"), CosineConfig(), PRESETS["h1"]
    spec = SpaceSpec.sequential("all", depth=args.depth)
    sched = TrainSchedule().scaled_to(args.epochs)
    searches, fixed = [], []
    for rep in range(args.reps):
        searches.append(das_search(spec, op, hp, sched, np.random.default_rng(900 + rep), cfg).runtime)
        for kind in (OperationKind.NET, OperationKind.LEARNABLE_GRAD):
            arch = DiscreteArch.uniform(spec, kind)
            fixed.append(train_architecture(arch, op, hp, sched, np.random.default_rng(950 + rep), cfg).runtime)
        print(f"rep {rep}: search {searches[-1]:.1f}s, fixed {fixed[-2]:.1f}s / {fixed[-1]:.1f}s")
    print(f"ratio {np.mean(searches) / np.mean(fixed):.2f}")


if __name__ == "__main__":
    main()
