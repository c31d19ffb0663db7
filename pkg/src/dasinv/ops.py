"""Candidate layer operations and the softmax-mixed layer."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter, Tensor, circular_shift, cnn_bank, linear_map, scale, small_cnn, softmax, weighted_sum
from .signals import DegradationOperator

__all__ = [
    "OperationKind",
    "OpInstance",
    "LayerContext",
    "op_init",
    "op_forward",
    "apply_op",
    "mixed_forward",
    "HIDDEN_WIDTH",
    "NOISE_STD",
]

HIDDEN_WIDTH = 16
KERNEL_SIZE = 3
NOISE_STD = 0.10
BN_EPS = 1e-5


class OperationKind(enum.Enum):
    LEARNABLE_GRAD = "LG"
    NET = "Net"
    ROLL = "Roll"
    NOISE = "Noise"
    ZERO = "Zero"

    @property
    def mnemonic(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "OperationKind":
        for kind in cls:
            if kind.value.lower() == text.strip().lower():
                return kind
        raise ValueError(f"unknown operation mnemonic {text!r}")

    @property
    def benign(self) -> bool:
        return self in (OperationKind.LEARNABLE_GRAD, OperationKind.NET)


@dataclass
class OpInstance:
    kind: OperationKind
    params: dict[str, Parameter] = field(default_factory=dict)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def copy(self) -> "OpInstance":
        return OpInstance(self.kind, {k: Parameter(p.data.copy()) for k, p in self.params.items()})


@dataclass
class LayerContext:
    """Per-forward-pass state shared by all layers.

    ``atf`` caches A^T f. Noise for a layer is drawn from a generator keyed on
    (``seed``, site index), so a layer sees the same noise whether it runs in
    the relaxed supernet or in a discretized network.
    """

    f: np.ndarray
    op: DegradationOperator
    seed: int = 0
    noise_std: float = NOISE_STD
    roll_shift: int | None = None
    atf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.f.shape[-1] != self.op.m:
            raise ValueError(f"measurement length {self.f.shape[-1]} does not match operator ({self.op.m})")
        self.atf = self.op.adjoint(self.f)

    def noise(self, site: int, shape: tuple[int, ...]) -> np.ndarray:
        return self.noise_std * np.random.default_rng([self.seed, site]).standard_normal(shape)

    def shift(self) -> int:
        return self.op.n // 4 if self.roll_shift is None else self.roll_shift


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _cnn_params(rng: np.random.Generator, hidden: int) -> dict[str, Parameter]:
    K = KERNEL_SIZE
    return {
        "w1": Parameter(_uniform(rng, (hidden, 1, K), K)),
        "b1": Parameter(np.zeros(hidden)),
        "gamma": Parameter(np.ones(hidden)),
        "beta": Parameter(np.zeros(hidden)),
        "w2": Parameter(_uniform(rng, (1, hidden, K), hidden * K)),
        "b2": Parameter(np.zeros(1)),
    }


def op_init(kind: OperationKind, rng: np.random.Generator, op: DegradationOperator, hidden: int = HIDDEN_WIDTH) -> OpInstance:
    """Fresh parameters; step sizes start at 1/||A||^2."""
    params: dict[str, Parameter] = {}
    if kind in (OperationKind.LEARNABLE_GRAD, OperationKind.NET):
        params.update(_cnn_params(rng, hidden))
    if kind in (OperationKind.LEARNABLE_GRAD, OperationKind.NOISE):
        params["tau"] = Parameter(np.array([1.0 / op.norm**2]))
    return OpInstance(kind, params)


def _cnn(u: Tensor, p: dict[str, Parameter]) -> Tensor:
    return small_cnn(u, p["w1"], p["b1"], p["gamma"], p["beta"], p["w2"], p["b2"], BN_EPS)


def _data_gradient(u: Tensor, ctx: LayerContext) -> Tensor:
    # A^T (A u - f) for D(v, f) = 0.5 ||v - f||^2
    return linear_map(u, ctx.op.gram, ctx.op.gram) - ctx.atf


def op_forward(inst: OpInstance, u: Tensor, ctx: LayerContext, site: int = 0) -> Tensor:
    """Apply one candidate operation to the state ``u`` [B,1,N]."""
    out = apply_op(inst, u, ctx, site)
    return Tensor(np.zeros(u.shape)) if out is None else out


def apply_op(inst: OpInstance, u: Tensor, ctx: LayerContext, site: int = 0, *, shared: dict | None = None) -> Tensor | None:
    """Like ``op_forward`` but ``Zero`` yields ``None`` so callers can skip it.

    ``shared`` may hold a precomputed data gradient (key ``"dg"``) and CNN
    outputs keyed by ``id(inst)``; values are identical to recomputing them.
    """
    if u.shape[-1] != ctx.op.n:
        raise ValueError(f"state length {u.shape[-1]} does not match operator length {ctx.op.n}")
    shared = shared or {}
    kind, p = inst.kind, inst.params
    if kind is OperationKind.LEARNABLE_GRAD:
        dg = shared["dg"] if "dg" in shared else _data_gradient(u, ctx)
        cnn = shared[id(inst)] if id(inst) in shared else _cnn(u, p)
        return u - scale(dg + cnn, p["tau"])
    if kind is OperationKind.NET:
        return shared[id(inst)] if id(inst) in shared else _cnn(u, p)
    if kind is OperationKind.NOISE:
        dg = shared["dg"] if "dg" in shared else _data_gradient(u, ctx)
        out = u - scale(dg, p["tau"])
        if ctx.noise_std > 0:
            out = out + ctx.noise(site, u.shape)
        return out
    if kind is OperationKind.ROLL:
        return circular_shift(u, ctx.shift())
    if kind is OperationKind.ZERO:
        return None
    raise ValueError(f"unsupported operation {kind}")


_CNN_KEYS = ("w1", "b1", "gamma", "beta", "w2", "b2")


def mixed_forward(alphas: Tensor, ops: list[OpInstance], u: Tensor, ctx: LayerContext, site: int = 0) -> Tensor | None:
    """sum_t softmax(alphas)_t * op_t(u).

    Candidates that share work on the same input (the data-term gradient, the
    CNNs of LG and Net) compute it once.
    """
    if len(ops) == 0:
        raise ValueError("mixed_forward needs at least one candidate")
    if alphas.shape != (len(ops),):
        raise ValueError("one architecture logit per candidate is required")
    shared: dict = {}
    with_dg = [o for o in ops if o.kind in (OperationKind.LEARNABLE_GRAD, OperationKind.NOISE)]
    if len(with_dg) > 1 and u.shape[-1] == ctx.op.n:
        shared["dg"] = _data_gradient(u, ctx)
    with_cnn = [o for o in ops if o.kind in (OperationKind.LEARNABLE_GRAD, OperationKind.NET)]
    if len(with_cnn) > 1 and u.shape[-1] == ctx.op.n:
        outs = cnn_bank(u, [[o.params[k] for k in _CNN_KEYS] for o in with_cnn], BN_EPS)
        shared.update({id(o): t for o, t in zip(with_cnn, outs)})
    outs = [apply_op(inst, u, ctx, site, shared=shared) for inst in ops]
    if all(o is None for o in outs):
        return None
    return weighted_sum(softmax(alphas), outs)
