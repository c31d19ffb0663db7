"""Multi-trial studies, summary statistics and record export."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .baselines import BudgetPolicy, fixed_op_baseline, random_search
from .engine import HyperParams, TrainSchedule, das_search, das_single_search, train_architecture
from .ops import OperationKind
from .runtime import parallel_map
from .signals import CosineConfig, DegradationOperator
from .spaces import SpaceSpec

__all__ = [
    "METHODS",
    "CSV_HEADER",
    "TrialRecord",
    "StudySummary",
    "LinearFit",
    "derive_seed",
    "run_trial",
    "run_study",
    "summarize",
    "pearson_linreg",
    "write_csv",
    "read_csv",
    "write_jsonl",
    "read_jsonl",
    "write_summary",
    "write_scatter",
    "export",
]

METHODS = ("das", "das-single", "random", "random-search", "fixed-op")
CSV_HEADER = ("study", "trial", "seed", "method", "hp", "one_shot_psnr", "arch_psnr", "arch", "runtime_s", "failed")
SEED_STRIDE = 2**20


def derive_seed(base_seed: int, trial: int) -> int:
    """Seed of trial ``trial``; distinct for all trials below 2**20 per base seed."""
    if base_seed < 0 or not 0 <= trial < SEED_STRIDE:
        raise ValueError(f"need base_seed >= 0 and 0 <= trial < {SEED_STRIDE}")
    return base_seed * SEED_STRIDE + trial


@dataclass
class TrialRecord:
    study: str
    trial: int
    seed: int
    method: str
    hp: str
    spec: str
    one_shot_psnr: float | None
    arch_psnr: float | None
    arch: str
    runtime_s: float
    failed: bool = False
    diagnostic: str = ""
    evaluations: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrialRecord":
        return cls(**d)


@dataclass(frozen=True)
class TrialTask:
    study: str
    trial: int
    seed: int
    method: str
    spec: SpaceSpec
    op: DegradationOperator
    hp: HyperParams
    hp_label: str
    sched: TrainSchedule
    cfg: CosineConfig | None
    budget: BudgetPolicy
    fixed_kind: OperationKind | None


def _finite_or_none(x: float | None) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def run_trial(task: TrialTask) -> TrialRecord:
    """One trial of a study; numerical failures become a flagged record."""
    rng = np.random.default_rng(task.seed)
    t0 = time.perf_counter()
    one_shot = None
    evaluations: list[dict] = []
    try:
        if task.method in ("das", "das-single"):
            search_rng, train_rng = rng.spawn(2)
            search = das_search if task.method == "das" else das_single_search
            res = search(task.spec, task.op, task.hp, task.sched, search_rng, task.cfg)
            arch = res.arch
            if res.failed:
                failed, diagnostic, value = True, res.diagnostic, None
            else:
                one_shot = res.one_shot_psnr
                tr = train_architecture(arch, task.op, task.hp, task.sched, train_rng, task.cfg)
                failed, diagnostic, value = tr.failed, tr.diagnostic, tr.arch_psnr
        elif task.method in ("random", "random-search"):
            budget = BudgetPolicy.of_count(1) if task.method == "random" else task.budget
            rs = random_search(task.spec, task.op, task.hp, budget, rng, task.cfg, task.sched)
            evaluations = [{"arch": str(r.arch), "arch_psnr": _finite_or_none(r.arch_psnr), "failed": r.failed}
                           for r in rs.records]
            arch, value = rs.best_arch, rs.best_psnr
            failed = arch is None
            diagnostic = "every evaluation failed" if failed else ""
        elif task.method == "fixed-op":
            tr = fixed_op_baseline(task.fixed_kind, task.spec, task.op, task.hp, task.sched, rng, task.cfg)
            arch, value, failed, diagnostic = tr.arch, tr.arch_psnr, tr.failed, tr.diagnostic
        else:
            raise ValueError(f"unknown method {task.method!r}")
    except (ArithmeticError, RuntimeError) as exc:
        arch, value, failed, diagnostic = None, None, True, f"{type(exc).__name__}: {exc}"
    return TrialRecord(
        study=task.study,
        trial=task.trial,
        seed=task.seed,
        method=task.method,
        hp=task.hp_label,
        spec=task.spec.summary(),
        one_shot_psnr=_finite_or_none(one_shot),
        arch_psnr=None if failed else _finite_or_none(value),
        arch="" if arch is None else str(arch),
        runtime_s=time.perf_counter() - t0,
        failed=bool(failed or (value is not None and not math.isfinite(value))),
        diagnostic=diagnostic,
        evaluations=evaluations,
    )


def run_study(method: str, spec: SpaceSpec, op: DegradationOperator, hp: HyperParams, n_trials: int,
              base_seed: int = 0, parallelism: int = 1, *, study: str = "study", hp_label: str = "custom",
              sched: TrainSchedule = TrainSchedule(), cfg: CosineConfig | None = None,
              budget: BudgetPolicy = BudgetPolicy(), fixed_kind: OperationKind | str | None = None,
              trials: Iterable[int] | None = None) -> list[TrialRecord]:
    """Run trials ``0..n_trials-1`` (or the listed ``trials``); records come back in trial order."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if method == "fixed-op":
        if fixed_kind is None:
            raise ValueError("fixed-op studies need fixed_kind (LG or Net)")
        fixed_kind = fixed_kind if isinstance(fixed_kind, OperationKind) else OperationKind.parse(fixed_kind)
        if not fixed_kind.benign:
            raise ValueError(f"fixed-op baselines need LG or Net, got {fixed_kind.mnemonic}")
    if method == "das-single" and spec.topology != "sequential":
        raise ValueError("das-single needs the sequential space")
    indices = sorted(set(trials)) if trials is not None else range(n_trials)
    tasks = [TrialTask(study, i, derive_seed(base_seed, i), method, spec, op, hp, hp_label, sched, cfg, budget,
                       fixed_kind if method == "fixed-op" else None) for i in indices]
    return parallel_map(run_trial, tasks, parallelism)


# ---------------------------------------------------------------- statistics


class LinearFit(NamedTuple):
    r: float
    slope: float
    intercept: float
    defined: bool


def pearson_linreg(xs: Sequence[float], ys: Sequence[float]) -> LinearFit:
    """Sample Pearson r and least-squares line y = slope * x + intercept.

    Zero variance in ``xs`` leaves everything undefined (NaN); zero variance
    in ``ys`` only leaves r undefined. ``defined`` is True when r is.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D of equal length")
    if len(x) < 2:
        raise ValueError("pearson_linreg needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    if sxx == 0:
        return LinearFit(math.nan, math.nan, math.nan, False)
    slope = sxy / sxx
    intercept = float(y.mean()) - slope * float(x.mean())
    if syy == 0:
        return LinearFit(math.nan, slope, intercept, False)
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    return LinearFit(r, slope, intercept, True)


@dataclass
class StudySummary:
    n: int
    max: float
    mean: float
    median: float
    std: float
    pearson_r: float | None
    slope: float | None
    intercept: float | None
    failures: int

    def to_json(self) -> dict:
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in dataclasses.asdict(self).items()}


def scatter_pairs(records: Sequence[TrialRecord]) -> list[tuple[float, float]]:
    """(one-shot, architecture) PSNR pairs of successful trials that have both."""
    return [(r.one_shot_psnr, r.arch_psnr) for r in records
            if not r.failed and r.one_shot_psnr is not None and r.arch_psnr is not None]


def summarize(records: Sequence[TrialRecord]) -> StudySummary:
    """Statistics of arch_psnr over successful trials; failures are only counted.

    ``n`` counts the successful trials. std is the sample standard deviation
    (0 for a single value).
    """
    if not records:
        raise ValueError("summarize needs at least one record")
    values = [r.arch_psnr for r in records if not r.failed and r.arch_psnr is not None]
    failures = len(records) - len(values)
    if not values:
        raise ValueError(f"all {len(records)} trials failed")
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    pairs = scatter_pairs(records)
    r = slope = intercept = None
    if len(pairs) >= 2:
        fit = pearson_linreg([p[0] for p in pairs], [p[1] for p in pairs])
        r, slope, intercept = fit.r, fit.slope, fit.intercept
    return StudySummary(
        n=len(values),
        max=max(values),
        mean=statistics.fmean(values),
        median=statistics.median(values),
        std=std,
        pearson_r=r,
        slope=slope,
        intercept=intercept,
        failures=failures,
    )


# ---------------------------------------------------------------- export


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def _open_for_write(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(records: Sequence[TrialRecord], path: str | Path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.study, r.trial, r.seed, r.method, r.hp, _fmt(r.one_shot_psnr), _fmt(r.arch_psnr),
                        r.arch, _fmt(r.runtime_s), "true" if r.failed else "false"])
    return path


def read_csv(path: str | Path) -> list[TrialRecord]:
    """Records from a CSV export (6-decimal precision, no spec/diagnostic columns)."""
    def opt(s: str) -> float | None:
        return None if s == "" else float(s)

    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected CSV header")
    out = []
    for row in rows[1:]:
        d = dict(zip(CSV_HEADER, row))
        out.append(TrialRecord(d["study"], int(d["trial"]), int(d["seed"]), d["method"], d["hp"], "",
                               opt(d["one_shot_psnr"]), opt(d["arch_psnr"]), d["arch"], float(d["runtime_s"]),
                               d["failed"] == "true"))
    return out


def write_jsonl(records: Sequence[TrialRecord], path: str | Path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")
    return path


def read_jsonl(path: str | Path) -> list[TrialRecord]:
    with Path(path).open() as fh:
        return [TrialRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def write_summary(summary: StudySummary, path: str | Path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        fh.write(json.dumps(summary.to_json(), indent=2) + "\n")
    return path


def write_scatter(records: Sequence[TrialRecord], path: str | Path) -> Path:
    """Exactly the (one-shot, architecture) pairs that enter the correlation."""
    path = Path(path)
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("one_shot_psnr", "arch_psnr"))
        for x, y in scatter_pairs(records):
            w.writerow((repr(x), repr(y)))
    return path


def export(records: Sequence[TrialRecord], out_dir: str | Path, stem: str,
           summary: StudySummary | None = None) -> dict[str, Path]:
    """Write CSV, JSON lines, summary JSON and scatter CSV; returns their paths."""
    out_dir = Path(out_dir)
    summary = summary if summary is not None else summarize(records)
    return {
        "csv": write_csv(records, out_dir / f"{stem}.csv"),
        "jsonl": write_jsonl(records, out_dir / f"{stem}.jsonl"),
        "summary": write_summary(summary, out_dir / f"{stem}.summary.json"),
        "scatter": write_scatter(records, out_dir / f"{stem}.scatter.csv"),
    }
