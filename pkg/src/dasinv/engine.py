"""Bi-level architecture search, retraining and the frozen-weight variant."""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Parameter, Tensor, backward, frozen, mse, no_grad, optimizer_step
from .signals import CosineConfig, DegradationOperator, make_batch, psnr
from .spaces import (
    DiscreteArch,
    DiscreteNet,
    RelaxedModel,
    SpaceSpec,
    build_discrete,
    build_relaxed,
    discretize,
)

__all__ = [
    "HyperParams",
    "PRESETS",
    "TrainSchedule",
    "SearchResult",
    "TrainResult",
    "Diverged",
    "lr_schedule",
    "das_search",
    "train_architecture",
    "das_single_search",
    "evaluate_psnr",
]


# overflow inside a diverging run is reported through Diverged, not as warnings
_QUIET = dict(over="ignore", invalid="ignore", divide="ignore")


@dataclass(frozen=True)
class HyperParams:
    param_lr: float = 1e-3
    param_wd: float = 1e-8
    param_warmup: bool = False
    alpha_lr: float = 1e-3
    alpha_wd: float = 1e-3
    alpha_warmup: bool = True
    alpha_scheduler: str = "linear"
    alpha_optimizer: str = "gd"
    param_optimizer: str = "gd"

    def __post_init__(self):
        if not self.param_lr > 0 or self.alpha_lr < 0:
            raise ValueError("learning rates must be positive")
        if self.param_wd < 0 or self.alpha_wd < 0:
            raise ValueError("weight decays must be non-negative")
        if self.alpha_scheduler not in ("none", "linear"):
            raise ValueError(f"alpha_scheduler must be 'none' or 'linear', got {self.alpha_scheduler!r}")
        if self.alpha_optimizer not in ("gd", "adam"):
            raise ValueError(f"alpha_optimizer must be 'gd' or 'adam', got {self.alpha_optimizer!r}")
        if self.param_optimizer not in ("gd", "adam"):
            raise ValueError(f"param_optimizer must be 'gd' or 'adam', got {self.param_optimizer!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS: dict[str, HyperParams] = {
    "h1": HyperParams(),
    "h2": HyperParams(alpha_lr=1e-4, alpha_wd=1e-4),
    "bohb-one-shot-blur": HyperParams(
        param_lr=0.0014232405, param_wd=8.616e-07, param_warmup=False,
        alpha_lr=0.0836808765, alpha_wd=5.05099e-05, alpha_warmup=False,
        alpha_scheduler="linear", alpha_optimizer="adam",
    ),
    "bohb-one-shot-ds": HyperParams(
        param_lr=0.0020448382, param_wd=5.04e-08, param_warmup=True,
        alpha_lr=0.0100063746, alpha_wd=0.0058022776, alpha_warmup=True,
        alpha_scheduler="linear", alpha_optimizer="gd",
    ),
    "bohb-blur": HyperParams(
        param_lr=0.0020882283, param_wd=4.4e-08, param_warmup=False,
        alpha_lr=8.43195e-05, alpha_wd=0.0127425783, alpha_warmup=True,
        alpha_scheduler="linear", alpha_optimizer="adam",
    ),
    "bohb-das-single": HyperParams(
        param_lr=0.0014232405, param_wd=8.616e-07, param_warmup=False,
        alpha_lr=0.025012337102395577, alpha_wd=1.390640076980444e-05, alpha_warmup=False,
        alpha_scheduler="none", alpha_optimizer="adam",
    ),
    "bohb-non-seq-one-shot-blur": HyperParams(
        param_lr=0.0050969066, param_wd=2.423e-07, param_warmup=False,
        alpha_lr=1.32499e-05, alpha_wd=0.0010171142, alpha_warmup=False,
        alpha_scheduler="none", alpha_optimizer="adam",
    ),
    "bohb-non-seq-blur": HyperParams(
        param_lr=0.0037014752, param_wd=1.4573e-06, param_warmup=False,
        alpha_lr=0.0012395056, alpha_wd=0.0002855732, alpha_warmup=False,
        alpha_scheduler="none", alpha_optimizer="adam",
    ),
}


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 50
    steps_per_epoch: int = 19
    batch_size: int = 128
    warmup_epochs: int = 10
    eval_samples: int = 2432

    def __post_init__(self):
        if min(self.epochs, self.steps_per_epoch, self.batch_size, self.eval_samples) < 1 or self.warmup_epochs < 0:
            raise ValueError("schedule sizes must be positive")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return min(self.warmup_epochs, self.epochs) * self.steps_per_epoch

    def with_epochs(self, epochs: int) -> "TrainSchedule":
        return dataclasses.replace(self, epochs=epochs)

    def scaled_to(self, epochs: int) -> "TrainSchedule":
        """Shorter or longer run keeping the warm-up's share of the epochs."""
        warm = math.floor(self.warmup_epochs * epochs / self.epochs + 0.5)
        return dataclasses.replace(self, epochs=epochs, warmup_epochs=warm)


def lr_schedule(base_lr: float, step: int, total_steps: int, warmup: bool = False, scheduler: str = "none",
                warmup_steps: int = 0, warmup_mode: str = "ramp") -> float:
    """Learning rate at ``step``.

    Warm-up either ramps linearly from 0 (``ramp``) or holds at 0
    (``freeze``) for ``warmup_steps``; the linear scheduler then decays to 0
    at the final step.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    start = 0
    if warmup and warmup_steps > 0:
        if step < warmup_steps:
            return 0.0 if warmup_mode == "freeze" else base_lr * step / warmup_steps
        start = warmup_steps
    if scheduler == "linear":
        span = total_steps - 1 - start
        return 0.0 if span <= 0 else base_lr * (total_steps - 1 - step) / span
    return base_lr


class Diverged(RuntimeError):
    pass


@dataclass
class SearchResult:
    one_shot_psnr: float
    arch: DiscreteArch | None
    betas: np.ndarray | None
    runtime: float
    failed: bool = False
    diagnostic: str = ""
    max_frozen_grad: float | None = None
    model: RelaxedModel | None = field(default=None, repr=False)
    pretrained: dict = field(default_factory=dict, repr=False)


@dataclass
class TrainResult:
    arch: DiscreteArch
    arch_psnr: float
    runtime: float
    failed: bool = False
    diagnostic: str = ""
    net: DiscreteNet | None = field(default=None, repr=False)


def _bind(model, op: DegradationOperator) -> Callable[[np.ndarray, int], Tensor]:
    return lambda y, seed: model.forward(y, op, seed)


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**63))


def evaluate_psnr(forward: Callable[[np.ndarray, int], Tensor], op: DegradationOperator, cfg: CosineConfig,
                  n_samples: int, eval_seed: int) -> float:
    """PSNR on one freshly drawn pool of ``n_samples`` signals (batch statistics over the pool)."""
    rng = np.random.default_rng(eval_seed)
    batch = make_batch(rng, op, cfg, n_samples)
    with no_grad(), np.errstate(**_QUIET):
        pred = forward(batch.measured, _seed(rng))
    return psnr(pred, batch.clean)


def _loss(forward, batch, seed: int) -> Tensor:
    loss = mse(forward(batch.measured, seed), batch.clean)
    if not math.isfinite(loss.item()):
        raise Diverged(f"non-finite loss {loss.item()}")
    return loss


def _theta_step(forward, theta, frozen_params, hp: HyperParams, lr: float, batch, seed: int) -> None:
    with np.errstate(**_QUIET):
        _theta_update(forward, theta, frozen_params, hp, lr, batch, seed)


def _theta_update(forward, theta, frozen_params, hp, lr, batch, seed) -> None:
    with frozen(frozen_params):
        loss = _loss(forward, batch, seed)
    if lr > 0:
        backward(loss, theta)
        optimizer_step(hp.param_optimizer, theta, lr, hp.param_wd)


def _alpha_step(forward, alphas, theta, hp: HyperParams, lr: float, batch, seed: int, track: list | None = None) -> None:
    with np.errstate(**_QUIET):
        _alpha_update(forward, alphas, theta, hp, lr, batch, seed, track)


def _alpha_update(forward, alphas, theta, hp, lr, batch, seed, track) -> None:
    with frozen(theta):
        loss = _loss(forward, batch, seed)
    backward(loss, alphas)
    if track is not None:
        track.append(max((float(np.abs(p.grad).max()) for p in theta if p.grad is not None), default=0.0))
    optimizer_step(hp.alpha_optimizer, alphas, lr, hp.alpha_wd)


def _check_cfg(cfg: CosineConfig | None, op: DegradationOperator) -> CosineConfig:
    cfg = cfg or CosineConfig(n=op.n)
    if cfg.n != op.n:
        raise ValueError("signal length and operator length differ")
    return cfg


def das_search(spec: SpaceSpec, op: DegradationOperator, hp: HyperParams, sched: TrainSchedule = TrainSchedule(),
               rng: np.random.Generator | None = None, cfg: CosineConfig | None = None, *, unroll_steps: int = 0,
               keep_model: bool = False) -> SearchResult:
    """First-order alternating search: one theta step on a training batch, one
    alpha step on a fresh validation batch, per iteration.

    ``unroll_steps=1`` evaluates the alpha gradient after a virtual theta step
    (dropping the second-order term) instead of at the current weights.
    """
    if unroll_steps not in (0, 1):
        raise ValueError("unroll_steps must be 0 or 1")
    cfg = _check_cfg(cfg, op)
    rng = rng if rng is not None else np.random.default_rng()
    init_rng, train_rng, val_rng, noise_rng, eval_rng = rng.spawn(5)
    t0 = time.perf_counter()
    model = build_relaxed(spec, init_rng, op)
    theta, alphas = model.theta(), model.alphas()
    forward = _bind(model, op)
    total, W = sched.total_steps, sched.warmup_steps
    try:
        for step in range(total):
            lr_t = lr_schedule(hp.param_lr, step, total, hp.param_warmup, "none", W, "ramp")
            batch = make_batch(train_rng, op, cfg, sched.batch_size)
            _theta_step(forward, theta, alphas, hp, lr_t, batch, _seed(noise_rng))
            lr_a = lr_schedule(hp.alpha_lr, step, total, hp.alpha_warmup, hp.alpha_scheduler, W, "freeze")
            if lr_a <= 0:
                continue
            vbatch = make_batch(val_rng, op, cfg, sched.batch_size)
            if unroll_steps:
                saved = [p.data for p in theta]
                _theta_step(forward, theta, alphas, hp, max(lr_t, hp.param_lr),
                            make_batch(train_rng, op, cfg, sched.batch_size), _seed(noise_rng))
                _alpha_step(forward, alphas, theta, hp, lr_a, vbatch, _seed(noise_rng))
                for p, d in zip(theta, saved):
                    p.data = d
                    p.step -= 1
            else:
                _alpha_step(forward, alphas, theta, hp, lr_a, vbatch, _seed(noise_rng))
        one_shot = evaluate_psnr(forward, op, cfg, sched.eval_samples, _seed(eval_rng))
        if not math.isfinite(one_shot):
            raise Diverged("non-finite one-shot PSNR")
    except (Diverged, FloatingPointError) as exc:
        return SearchResult(math.nan, discretize(model), model.betas(), time.perf_counter() - t0, True, str(exc),
                            model=model if keep_model else None)
    return SearchResult(one_shot, discretize(model), model.betas(), time.perf_counter() - t0,
                        model=model if keep_model else None)


def _fit(net: DiscreteNet, op, hp, sched, cfg, train_rng, noise_rng) -> None:
    theta = net.theta()
    total, W = sched.total_steps, sched.warmup_steps
    for step in range(total):
        lr_t = lr_schedule(hp.param_lr, step, total, hp.param_warmup, "none", W, "ramp")
        batch = make_batch(train_rng, op, cfg, sched.batch_size)
        _theta_step(_bind(net, op), theta, (), hp, lr_t, batch, _seed(noise_rng))


def train_architecture(arch: DiscreteArch, op: DegradationOperator, hp: HyperParams,
                       sched: TrainSchedule = TrainSchedule(), rng: np.random.Generator | None = None,
                       cfg: CosineConfig | None = None, *, eval_seed: int | None = None,
                       keep_net: bool = False) -> TrainResult:
    """Retrain ``arch`` from scratch and report its validation PSNR."""
    cfg = _check_cfg(cfg, op)
    rng = rng if rng is not None else np.random.default_rng()
    init_rng, train_rng, noise_rng, eval_rng = rng.spawn(4)
    if eval_seed is None:
        eval_seed = _seed(eval_rng)
    t0 = time.perf_counter()
    net = build_discrete(arch, init_rng, op)
    try:
        _fit(net, op, hp, sched, cfg, train_rng, noise_rng)
        value = evaluate_psnr(_bind(net, op), op, cfg, sched.eval_samples, eval_seed)
        if not math.isfinite(value):
            raise Diverged("non-finite architecture PSNR")
    except (Diverged, FloatingPointError) as exc:
        return TrainResult(arch, math.nan, time.perf_counter() - t0, True, str(exc), net if keep_net else None)
    return TrainResult(arch, value, time.perf_counter() - t0, net=net if keep_net else None)


def das_single_search(spec: SpaceSpec, op: DegradationOperator, hp: HyperParams,
                      sched: TrainSchedule = TrainSchedule(), rng: np.random.Generator | None = None,
                      cfg: CosineConfig | None = None, *, keep_model: bool = False) -> SearchResult:
    """Search only the logits over pre-trained, frozen operations.

    Each benign operation is trained as an all-that-operation network; layer j
    of that network becomes the candidate at site j. Harmful operations keep
    their fresh initialization.
    """
    if spec.topology != "sequential":
        raise ValueError("frozen-weight search needs the sequential space")
    cfg = _check_cfg(cfg, op)
    rng = rng if rng is not None else np.random.default_rng()
    pre_rng, init_rng, val_rng, noise_rng, eval_rng = rng.spawn(5)
    eval_seed = _seed(eval_rng)
    t0 = time.perf_counter()
    pretrained: dict = {}
    for kind, kind_rng in zip(spec.opset, pre_rng.spawn(len(spec.opset))):
        if kind.benign:
            res = train_architecture(DiscreteArch.uniform(spec, kind), op, hp, sched, kind_rng, cfg,
                                     eval_seed=eval_seed, keep_net=True)
            if res.failed:
                return SearchResult(math.nan, None, None, time.perf_counter() - t0, True,
                                    f"pre-training {kind.mnemonic} failed: {res.diagnostic}")
            pretrained[kind] = res
    model = build_relaxed(spec, init_rng, op)
    for j, site in enumerate(model.sites):
        for t, kind in enumerate(spec.opset):
            if kind in pretrained:
                site.candidates[t] = pretrained[kind].net.ops[j].copy()
    theta, alphas = model.theta(), model.alphas()
    forward = _bind(model, op)
    for p in theta:
        p.requires_grad = False
    total, W = sched.total_steps, sched.warmup_steps
    track: list[float] = []
    try:
        for step in range(total):
            lr_a = lr_schedule(hp.alpha_lr, step, total, hp.alpha_warmup, hp.alpha_scheduler, W, "freeze")
            if lr_a <= 0:
                continue
            vbatch = make_batch(val_rng, op, cfg, sched.batch_size)
            with frozen(theta):
                loss = _loss(forward, vbatch, _seed(noise_rng))
            backward(loss, alphas + theta)
            track.append(max((float(np.abs(p.grad).max()) for p in theta), default=0.0))
            for p in theta:
                p.grad = None
            optimizer_step(hp.alpha_optimizer, alphas, lr_a, hp.alpha_wd)
        one_shot = evaluate_psnr(forward, op, cfg, sched.eval_samples, eval_seed)
        if not math.isfinite(one_shot):
            raise Diverged("non-finite one-shot PSNR")
    except (Diverged, FloatingPointError) as exc:
        return SearchResult(math.nan, discretize(model), model.betas(), time.perf_counter() - t0, True, str(exc),
                            max(track, default=0.0), model if keep_model else None, pretrained)
    return SearchResult(one_shot, discretize(model), model.betas(), time.perf_counter() - t0,
                        max_frozen_grad=max(track, default=0.0), model=model if keep_model else None,
                        pretrained=pretrained)
