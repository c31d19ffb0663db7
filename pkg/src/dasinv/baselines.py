"""Comparison protocols: fixed-operation networks, random architectures, and
how many random draws it takes to beat a PSNR threshold."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import HyperParams, TrainResult, TrainSchedule, train_architecture
from .ops import OperationKind
from .signals import CosineConfig, DegradationOperator
from .spaces import DiscreteArch, SearchSpaceTooLarge, SpaceSpec, random_arch

__all__ = [
    "BudgetPolicy",
    "EvalRecord",
    "RandomSearchResult",
    "RunsToBeat",
    "fixed_op_baseline",
    "single_random",
    "random_search",
    "runs_to_beat",
]

Evaluator = Callable[[DiscreteArch, np.random.Generator], TrainResult]


@dataclass(frozen=True)
class BudgetPolicy:
    """How many architectures a random search may train.

    ``count`` mode trains exactly ``count`` architectures; ``wall-clock`` mode
    keeps drawing until ``seconds`` have elapsed (at least one evaluation).
    """

    mode: str = "count"
    count: int | None = 5
    seconds: float | None = None

    def __post_init__(self):
        if self.mode == "count":
            if self.count is None or self.count < 1:
                raise ValueError("count mode needs count >= 1")
            if self.seconds is not None:
                raise ValueError("count mode takes no seconds value")
        elif self.mode == "wall-clock":
            if self.seconds is None or not self.seconds > 0:
                raise ValueError("wall-clock mode needs seconds > 0")
            if self.count is not None:
                raise ValueError("wall-clock mode takes no count value")
        else:
            raise ValueError(f"unknown budget mode {self.mode!r} (count | wall-clock)")

    @classmethod
    def of_count(cls, count: int) -> "BudgetPolicy":
        return cls("count", count, None)

    @classmethod
    def wall_clock(cls, seconds: float) -> "BudgetPolicy":
        return cls("wall-clock", None, seconds)


@dataclass
class EvalRecord:
    arch: DiscreteArch
    arch_psnr: float
    runtime: float
    failed: bool = False
    diagnostic: str = ""


@dataclass
class RandomSearchResult:
    best_arch: DiscreteArch | None
    best_psnr: float
    records: list[EvalRecord] = field(default_factory=list)


@dataclass
class RunsToBeat:
    mean: float
    counts: list[int]
    censored: list[bool]


def fixed_op_baseline(kind: OperationKind, spec: SpaceSpec, op: DegradationOperator, hp: HyperParams,
                      sched: TrainSchedule = TrainSchedule(), rng: np.random.Generator | None = None,
                      cfg: CosineConfig | None = None) -> TrainResult:
    """Train the network that uses ``kind`` at every site."""
    kind = OperationKind(kind)
    if not kind.benign:
        raise ValueError(f"fixed-operation baselines need LG or Net, got {kind.mnemonic}")
    arch = DiscreteArch.uniform(spec, kind)
    return train_architecture(arch, op, hp, sched, rng, cfg)


def _default_evaluator(op, hp, sched, cfg) -> Evaluator:
    return lambda arch, rng: train_architecture(arch, op, hp, sched, rng, cfg)


def _arch_stream(spec: SpaceSpec, rng: np.random.Generator, replace: bool):
    if replace:
        while True:
            yield random_arch(spec, rng)
    T = len(spec.opset)
    total = T**spec.n_sites
    if total > 100_000:
        raise SearchSpaceTooLarge(f"sampling without replacement needs an enumerable space, got {total}")
    for index in rng.permutation(total):
        digits = []
        for _ in range(spec.n_sites):
            index, d = divmod(int(index), T)
            digits.append(d)
        yield DiscreteArch(spec, tuple(reversed(digits)))


def random_search(spec: SpaceSpec, op: DegradationOperator, hp: HyperParams, budget: BudgetPolicy = BudgetPolicy(),
                  rng: np.random.Generator | None = None, cfg: CosineConfig | None = None,
                  sched: TrainSchedule = TrainSchedule(), *, replace: bool = True,
                  evaluator: Evaluator | None = None) -> RandomSearchResult:
    """Train random architectures until the budget is spent; keep the best.

    Architecture draws and training streams come from separate children of
    ``rng``, so the first k evaluations do not depend on the budget. With
    ``replace=False`` architectures are drawn without repetition (small spaces
    only). ``evaluator(arch, rng)`` replaces the default retraining.
    """
    rng = rng if rng is not None else np.random.default_rng()
    arch_rng, train_rng = rng.spawn(2)
    evaluate = evaluator or _default_evaluator(op, hp, sched, cfg)
    stream = _arch_stream(spec, arch_rng, replace)
    records: list[EvalRecord] = []
    t0 = time.perf_counter()
    while True:
        if budget.mode == "count" and len(records) >= budget.count:
            break
        if budget.mode == "wall-clock" and records and time.perf_counter() - t0 >= budget.seconds:
            break
        try:
            arch = next(stream)
        except StopIteration:
            raise ValueError(f"budget exceeds the {len(records)} distinct architectures of the space") from None
        res = evaluate(arch, train_rng.spawn(1)[0])
        records.append(EvalRecord(arch, res.arch_psnr, res.runtime, res.failed, res.diagnostic))
    ok = [r for r in records if not r.failed]
    if not ok:
        return RandomSearchResult(None, math.nan, records)
    best = max(ok, key=lambda r: r.arch_psnr)
    return RandomSearchResult(best.arch, best.arch_psnr, records)


def single_random(spec: SpaceSpec, op: DegradationOperator, hp: HyperParams, rng: np.random.Generator | None = None,
                  cfg: CosineConfig | None = None, sched: TrainSchedule = TrainSchedule()) -> RandomSearchResult:
    """One random architecture, retrained: a random search with a budget of one."""
    return random_search(spec, op, hp, BudgetPolicy.of_count(1), rng, cfg, sched)


def runs_to_beat(spec: SpaceSpec, op: DegradationOperator, hp: HyperParams, threshold: float,
                 repetitions: int = 10, cap: int = 200, rng: np.random.Generator | None = None,
                 cfg: CosineConfig | None = None, sched: TrainSchedule = TrainSchedule(), *,
                 evaluator: Evaluator | None = None) -> RunsToBeat:
    """Count random evaluations until one scores strictly above ``threshold``.

    A repetition that reaches ``cap`` without success records ``cap`` and is
    flagged as censored.
    """
    if math.isnan(threshold):
        raise ValueError("threshold must not be NaN")
    if repetitions < 1 or cap < 1:
        raise ValueError("repetitions and cap must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    evaluate = evaluator or _default_evaluator(op, hp, sched, cfg)
    counts: list[int] = []
    censored: list[bool] = []
    for rep_rng in rng.spawn(repetitions):
        arch_rng, train_rng = rep_rng.spawn(2)
        for k in range(1, cap + 1):
            res = evaluate(random_arch(spec, arch_rng), train_rng.spawn(1)[0])
            if not res.failed and res.arch_psnr > threshold:
                counts.append(k)
                censored.append(False)
                break
        else:
            counts.append(cap)
            censored.append(True)
    return RunsToBeat(float(np.mean(counts)), counts, censored)
