"""Hyperband brackets with a TPE-style kernel-density sampler (BOHB)."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .engine import HyperParams, TrainSchedule, das_search, das_single_search, train_architecture
from .runtime import parallel_map
from .signals import CosineConfig, DegradationOperator
from .spaces import SpaceSpec

__all__ = [
    "HPSpace",
    "Bracket",
    "BohbRecord",
    "BohbResult",
    "Objective",
    "hyperband_brackets",
    "sample_config",
    "run_bohb",
    "write_log",
    "read_log",
]


@dataclass(frozen=True)
class HPSpace:
    """Search ranges; continuous dimensions are sampled log-uniformly."""

    param_lr: tuple[float, float] = (1e-5, 1.0)
    param_wd: tuple[float, float] = (1e-8, 0.1)
    alpha_lr: tuple[float, float] = (1e-5, 0.1)
    alpha_wd: tuple[float, float] = (1e-5, 0.1)
    param_warmup: tuple = (True, False)
    alpha_warmup: tuple = (True, False)
    alpha_scheduler: tuple = ("none", "linear")
    alpha_optimizer: tuple = ("adam", "gd")

    CONTINUOUS = ("param_lr", "param_wd", "alpha_lr", "alpha_wd")
    CATEGORICAL = ("param_warmup", "alpha_warmup", "alpha_scheduler", "alpha_optimizer")

    def __post_init__(self):
        for name in self.CONTINUOUS:
            lo, hi = getattr(self, name)
            if not 0 < lo < hi:
                raise ValueError(f"{name} range must satisfy 0 < low < high, got {(lo, hi)}")
        for name in self.CATEGORICAL:
            if not getattr(self, name):
                raise ValueError(f"{name} needs at least one choice")

    @property
    def n_choices(self) -> list[int]:
        return [len(getattr(self, n)) for n in self.CATEGORICAL]

    def decode(self, cont: np.ndarray, cats: Sequence[int], base: HyperParams | None = None) -> HyperParams:
        """Map unit-interval log coordinates and category indices to HyperParams."""
        values = {}
        for name, u in zip(self.CONTINUOUS, cont):
            lo, hi = getattr(self, name)
            u = min(max(float(u), 0.0), 1.0)
            values[name] = float(math.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))))
        for name, c in zip(self.CATEGORICAL, cats):
            values[name] = getattr(self, name)[int(c)]
        return dataclasses.replace(base or HyperParams(), **values)

    def encode(self, hp: HyperParams) -> tuple[np.ndarray, list[int]]:
        cont = []
        for name in self.CONTINUOUS:
            lo, hi = getattr(self, name)
            v = min(max(getattr(hp, name), lo), hi)
            cont.append((math.log(v) - math.log(lo)) / (math.log(hi) - math.log(lo)))
        cats = [list(getattr(self, name)).index(getattr(hp, name)) for name in self.CATEGORICAL]
        return np.array(cont), cats

    def uniform(self, rng: np.random.Generator, base: HyperParams | None = None) -> HyperParams:
        cont = rng.uniform(0.0, 1.0, size=len(self.CONTINUOUS))
        cats = [int(rng.integers(k)) for k in self.n_choices]
        return self.decode(cont, cats, base)


@dataclass(frozen=True)
class Bracket:
    """One successive-halving run: (number of configs, budget) per rung."""

    s: int
    rungs: tuple[tuple[int, int], ...]

    @property
    def n_evaluations(self) -> int:
        return sum(n for n, _ in self.rungs)


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def hyperband_brackets(max_budget: int = 50, eta: int = 3, min_budget: float | None = None) -> list[Bracket]:
    """Hyperband brackets, widest first.

    Rung budgets are ``max_budget * eta**-i`` rounded to the nearest integer
    (``min_budget`` defaults to ``max_budget / eta**2``, floored at 1). Bracket
    ``s`` starts ``ceil((s_max + 1) / (s + 1) * eta**s)`` configs and each rung
    keeps the top ``ceil(k / eta)``.
    """
    if eta < 2:
        raise ValueError("eta must be >= 2")
    if min_budget is None:
        if max_budget < eta:
            raise ValueError(f"max_budget ({max_budget}) must be >= eta ({eta})")
        min_budget = max(max_budget / eta**2, 1.0)
    if not 0 < min_budget <= max_budget:
        raise ValueError("min_budget must lie in (0, max_budget]")
    s_max = int(math.floor(math.log(max_budget / min_budget) / math.log(eta) + 1e-9))
    budgets = [_round(max_budget * eta ** (i - s_max)) for i in range(s_max + 1)]
    if budgets[0] < 1 or len(set(budgets)) != len(budgets):
        raise ValueError(f"rung budgets {budgets} are not distinct positive integers")
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1) * eta**s)
        rungs = []
        for i in range(s + 1):
            rungs.append((n, budgets[s_max - s + i]))
            n = math.ceil(n / eta)
        brackets.append(Bracket(s, tuple(rungs)))
    return brackets


@dataclass
class BohbRecord:
    config: HyperParams
    budget: int
    score: float
    iteration: int
    bracket: int = 0
    rung: int = 0
    failed: bool = False
    diagnostic: str = ""

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "bracket": self.bracket,
            "rung": self.rung,
            "budget": self.budget,
            "config": self.config.to_dict(),
            "score": self.score if math.isfinite(self.score) else None,
            "failed": self.failed,
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_json(cls, d: dict) -> "BohbRecord":
        score = -math.inf if d["score"] is None else float(d["score"])
        return cls(HyperParams(**d["config"]), int(d["budget"]), score, int(d["iteration"]),
                   int(d.get("bracket", 0)), int(d.get("rung", 0)), bool(d["failed"]), d.get("diagnostic", ""))


# ---------------------------------------------------------------- sampler

MIN_POINTS = 8
TOP_FRACTION = 0.15
N_CANDIDATES = 64
RANDOM_FRACTION = 1 / 3
BANDWIDTH_FACTOR = 3.0
MIN_BANDWIDTH = 1e-3
CAT_BANDWIDTH = 0.2


class _UnivariateKDE:
    """Product of per-dimension kernels: Gaussian (truncated to [0,1]) for
    continuous coordinates, Aitchison-Aitken for categories."""

    def __init__(self, cont: np.ndarray, cats: np.ndarray, n_choices: Sequence[int]):
        self.cont = cont
        self.cats = cats
        self.n_choices = list(n_choices)
        m = len(cont)
        std = cont.std(axis=0, ddof=1) if m > 1 else np.zeros(cont.shape[1])
        self.bw = np.maximum(1.06 * std * m ** (-1 / 5), MIN_BANDWIDTH)

    def _cat_prob(self, d: int, value: int) -> np.ndarray:
        k = self.n_choices[d]
        if k == 1:
            return np.ones(len(self.cats))
        return np.where(self.cats[:, d] == value, 1.0 - CAT_BANDWIDTH, CAT_BANDWIDTH / (k - 1))

    def log_pdf(self, cont: np.ndarray, cats: Sequence[int]) -> float:
        z = (cont[None, :] - self.cont) / self.bw
        # normalizer of a Gaussian truncated to [0,1]
        mass = _norm_cdf((1 - self.cont) / self.bw) - _norm_cdf(-self.cont / self.bw)
        k = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.bw * np.maximum(mass, 1e-300))
        per_point = np.prod(k, axis=1)
        for d, v in enumerate(cats):
            per_point = per_point * self._cat_prob(d, v)
        return float(np.log(max(per_point.mean(), 1e-300)))

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
        i = int(rng.integers(len(self.cont)))
        cont = np.empty(self.cont.shape[1])
        for d in range(len(cont)):
            bw = self.bw[d] * BANDWIDTH_FACTOR
            for _ in range(100):
                v = rng.normal(self.cont[i, d], bw)
                if 0.0 <= v <= 1.0:
                    break
            cont[d] = min(max(v, 0.0), 1.0)
        cats = []
        for d, k in enumerate(self.n_choices):
            c = int(self.cats[i, d])
            if k > 1 and rng.random() < CAT_BANDWIDTH:
                c = int(rng.choice([j for j in range(k) if j != c]))
            cats.append(c)
        return cont, cats


def _norm_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(np.asarray(x) / math.sqrt(2.0)))


def _model_budget(history: Sequence[BohbRecord], min_points: int) -> int | None:
    # largest budget that has enough observations for a model
    counts: dict[int, int] = {}
    for r in history:
        counts[r.budget] = counts.get(r.budget, 0) + 1
    usable = [b for b, c in counts.items() if c >= min_points]
    return max(usable) if usable else None


def sample_config(rng: np.random.Generator, history: Sequence[BohbRecord] = (), space: HPSpace = HPSpace(), *,
                  base: HyperParams | None = None, model_based: bool | None = None,
                  min_points: int = MIN_POINTS) -> HyperParams:
    """Draw the next configuration to evaluate.

    Uniform until some budget has ``min_points`` observations. Then, with
    probability 2/3 (or always, if ``model_based`` is True), fit densities to
    the top 15% and the rest of the observations at the largest such budget
    and return the best good/bad density ratio among 64 draws from the good
    density. Failed evaluations count as the worst scores.
    """
    budget = _model_budget(history, min_points)
    if model_based is None:
        model_based = budget is not None and rng.random() >= RANDOM_FRACTION
    if not model_based or budget is None:
        return space.uniform(rng, base)
    obs = [r for r in history if r.budget == budget]
    obs.sort(key=lambda r: -r.score if not r.failed else math.inf)
    n_good = max(1, math.ceil(TOP_FRACTION * len(obs)))
    encoded = [space.encode(r.config) for r in obs]
    cont = np.array([e[0] for e in encoded])
    cats = np.array([e[1] for e in encoded])
    good = _UnivariateKDE(cont[:n_good], cats[:n_good], space.n_choices)
    bad = _UnivariateKDE(cont[n_good:], cats[n_good:], space.n_choices)
    best, best_ratio = None, -math.inf
    for _ in range(N_CANDIDATES):
        c, k = good.sample(rng)
        ratio = good.log_pdf(c, k) - bad.log_pdf(c, k)
        if ratio > best_ratio:
            best, best_ratio = (c, k), ratio
    return space.decode(best[0], best[1], base)


# ---------------------------------------------------------------- objective


@dataclass(frozen=True)
class Objective:
    """Score a configuration at a budget of epochs.

    ``one-shot`` scores the relaxed model after search; ``architecture``
    additionally retrains the discretized architecture and scores that
    (about twice the cost). The warm-up keeps its share of the epochs.
    """

    kind: str
    spec: SpaceSpec
    op: DegradationOperator
    sched: TrainSchedule = TrainSchedule()
    cfg: CosineConfig | None = None
    method: str = "das"

    def __post_init__(self):
        if self.kind not in ("one-shot", "architecture"):
            raise ValueError(f"objective kind must be 'one-shot' or 'architecture', got {self.kind!r}")
        if self.method not in ("das", "das-single"):
            raise ValueError(f"objective method must be 'das' or 'das-single', got {self.method!r}")

    def __call__(self, hp: HyperParams, budget: int, rng: np.random.Generator) -> tuple[float, bool, str]:
        sched = self.sched.scaled_to(budget)
        search_rng, train_rng = rng.spawn(2)
        search = das_search if self.method == "das" else das_single_search
        res = search(self.spec, self.op, hp, sched, search_rng, self.cfg)
        if res.failed:
            return -math.inf, True, res.diagnostic
        if self.kind == "one-shot":
            return res.one_shot_psnr, False, ""
        tr = train_architecture(res.arch, self.op, hp, sched, train_rng, self.cfg)
        if tr.failed:
            return -math.inf, True, tr.diagnostic
        return tr.arch_psnr, False, ""


def _evaluate(task) -> tuple[float, bool, str]:
    objective, hp, budget, rng = task
    try:
        out = objective(hp, budget, rng)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        return -math.inf, True, f"{type(exc).__name__}: {exc}"
    if isinstance(out, tuple):
        score, failed, diag = out
    else:
        score, failed, diag = float(out), False, ""
    if not math.isfinite(score):
        return -math.inf, True, diag or "non-finite score"
    return float(score), failed, diag


@dataclass
class BohbResult:
    best: HyperParams | None
    best_score: float
    records: list[BohbRecord] = field(default_factory=list)


def run_bohb(objective: Callable, iterations: int = 128, rng: np.random.Generator | None = None,
             space: HPSpace = HPSpace(), *, max_budget: int = 50, eta: int = 3, min_budget: float | None = None,
             brackets: Sequence[Bracket] | None = None, base: HyperParams | None = None,
             log_path: str | Path | None = None, parallelism: int = 1) -> BohbResult:
    """Run ``iterations`` brackets (cycling widest to narrowest).

    ``objective(hp, budget, rng)`` returns a score, or (score, failed,
    diagnostic). Failures score -inf so they are never promoted. Returns the
    best configuration evaluated at the largest budget.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    brackets = list(brackets) if brackets is not None else hyperband_brackets(max_budget, eta, min_budget)
    top_budget = max(b for br in brackets for _, b in br.rungs)
    sample_rng, eval_rng = rng.spawn(2)
    records: list[BohbRecord] = []
    for it in range(iterations):
        bracket = brackets[it % len(brackets)]
        configs = [sample_config(sample_rng, records, space, base=base) for _ in range(bracket.rungs[0][0])]
        for rung, (n, budget) in enumerate(bracket.rungs):
            configs = configs[:n]
            tasks = [(objective, hp, budget, child) for hp, child in zip(configs, eval_rng.spawn(len(configs)))]
            outcomes = parallel_map(_evaluate, tasks, parallelism)
            rung_records = [BohbRecord(hp, budget, s, it, bracket.s, rung, f, d)
                            for hp, (s, f, d) in zip(configs, outcomes)]
            records.extend(rung_records)
            # stable sort: ties keep the earlier config first
            order = sorted(range(len(rung_records)), key=lambda i: -rung_records[i].score)
            configs = [configs[i] for i in order]
    if log_path is not None:
        write_log(records, log_path)
    finals = [r for r in records if r.budget == top_budget and not r.failed]
    if not finals:
        return BohbResult(None, -math.inf, records)
    best = max(finals, key=lambda r: r.score)
    return BohbResult(best.config, best.score, records)


def write_log(records: Sequence[BohbRecord], path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in records:
                fh.write(json.dumps(r.to_json()) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write BOHB log {path}: {exc}") from exc
    return path


def read_log(path: str | Path) -> list[BohbRecord]:
    with Path(path).open() as fh:
        return [BohbRecord.from_json(json.loads(line)) for line in fh if line.strip()]
