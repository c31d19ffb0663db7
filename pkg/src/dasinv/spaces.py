"""Sequential and cell-based search spaces: relaxed supernets and discrete networks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .autodiff import Parameter, Tensor, concat_channels, conv1d
from .ops import (
    HIDDEN_WIDTH,
    NOISE_STD,
    LayerContext,
    OperationKind,
    OpInstance,
    apply_op,
    mixed_forward,
    op_init,
)
from .signals import DegradationOperator

__all__ = [
    "SpaceSpec",
    "DiscreteArch",
    "RelaxedModel",
    "DiscreteNet",
    "SearchSpaceTooLarge",
    "GOOD_OPS",
    "ALL_OPS",
    "build_relaxed",
    "forward_relaxed",
    "discretize",
    "build_discrete",
    "random_arch",
    "enumerate_archs",
]

LG, NET, ROLL, NOISE, ZERO = (
    OperationKind.LEARNABLE_GRAD,
    OperationKind.NET,
    OperationKind.ROLL,
    OperationKind.NOISE,
    OperationKind.ZERO,
)
GOOD_OPS = (LG, NET)
ALL_OPS = (LG, NET, ROLL, NOISE)
ALPHA_INIT_STD = 1e-3
MAX_ENUMERATION = 100_000


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class SpaceSpec:
    topology: str = "sequential"
    depth: int = 10
    cells: int = 2
    states: int = 5
    opset: tuple[OperationKind, ...] = ALL_OPS
    global_residual: bool = True
    hidden: int = HIDDEN_WIDTH
    noise_std: float = NOISE_STD
    roll_shift: int | None = None

    def __post_init__(self):
        if self.topology not in ("sequential", "cell"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if not self.opset:
            raise ValueError("opset must not be empty")
        if len(set(self.opset)) != len(self.opset):
            raise ValueError("opset contains duplicates")
        if self.topology == "sequential":
            if ZERO in self.opset:
                raise ValueError("the zero operation is only allowed in the cell space")
            if self.depth < 1:
                raise ValueError("depth must be >= 1")
        else:
            if self.cells < 1 or self.states < 2:
                raise ValueError("cell space needs cells >= 1 and states >= 2")

    @classmethod
    def sequential(cls, opset: str | Sequence[OperationKind] = "all", depth: int = 10, **kw) -> "SpaceSpec":
        return cls(topology="sequential", depth=depth, opset=_resolve_opset(opset, "sequential"), **kw)

    @classmethod
    def cell(cls, opset: str | Sequence[OperationKind] = "all", cells: int = 2, states: int = 5, **kw) -> "SpaceSpec":
        return cls(topology="cell", cells=cells, states=states, opset=_resolve_opset(opset, "cell"), **kw)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Edges (i, j), i < j, of one cell in lexicographic order."""
        return list(itertools.combinations(range(self.states + 1), 2))

    @property
    def n_sites(self) -> int:
        if self.topology == "sequential":
            return self.depth
        return self.cells * math.comb(self.states + 1, 2)

    def summary(self) -> str:
        ops = "+".join(k.mnemonic for k in self.opset)
        res = "res" if self.global_residual else "nores"
        if self.topology == "sequential":
            return f"sequential/L{self.depth}/{ops}/{res}"
        return f"cell/{self.cells}x{self.states}/{ops}/{res}"


def _resolve_opset(opset, topology: str) -> tuple[OperationKind, ...]:
    if isinstance(opset, str):
        if opset == "good":
            return GOOD_OPS
        if opset == "all":
            return ALL_OPS + ((ZERO,) if topology == "cell" else ())
        return tuple(OperationKind.parse(t) for t in opset.split(","))
    return tuple(opset)


@dataclass(frozen=True)
class DiscreteArch:
    spec: SpaceSpec
    choices: tuple[int, ...]

    def __post_init__(self):
        if len(self.choices) != self.spec.n_sites:
            raise ValueError(f"expected {self.spec.n_sites} choices, got {len(self.choices)}")
        if any(not 0 <= c < len(self.spec.opset) for c in self.choices):
            raise ValueError("choice outside the opset")

    @property
    def kinds(self) -> tuple[OperationKind, ...]:
        return tuple(self.spec.opset[c] for c in self.choices)

    def to_string(self) -> str:
        names = [k.mnemonic for k in self.kinds]
        if self.spec.topology == "sequential":
            return "seq:" + ",".join(names)
        per = len(self.spec.edges)
        return "cell:" + "|".join(",".join(names[i : i + per]) for i in range(0, len(names), per))

    __str__ = to_string

    @classmethod
    def from_kinds(cls, spec: SpaceSpec, kinds: Sequence[OperationKind]) -> "DiscreteArch":
        try:
            return cls(spec, tuple(spec.opset.index(k) for k in kinds))
        except ValueError:
            raise ValueError(f"operation not in opset {[k.mnemonic for k in spec.opset]}") from None

    @classmethod
    def uniform(cls, spec: SpaceSpec, kind: OperationKind) -> "DiscreteArch":
        return cls.from_kinds(spec, [kind] * spec.n_sites)

    @classmethod
    def from_string(cls, text: str, spec: SpaceSpec) -> "DiscreteArch":
        tag, _, body = text.partition(":")
        expected = "seq" if spec.topology == "sequential" else "cell"
        if tag != expected:
            raise ValueError(f"architecture tag {tag!r} does not match topology {spec.topology!r}")
        if spec.topology == "cell" and body.count("|") != spec.cells - 1:
            raise ValueError("cell count in architecture string does not match the space")
        names = [t for t in body.replace("|", ",").split(",") if t]
        return cls.from_kinds(spec, [OperationKind.parse(t) for t in names])


def _cell_conv(rng: np.random.Generator) -> tuple[Parameter, Parameter]:
    bound = 1.0 / math.sqrt(2.0)
    return Parameter(rng.uniform(-bound, bound, size=(1, 2, 1))), Parameter(np.zeros(1))


def _run_body(spec: SpaceSpec, u0: Tensor, site_fn: Callable, cell_convs) -> Tensor:
    if spec.topology == "sequential":
        u = u0
        for j in range(spec.depth):
            u = site_fn(j, u)
        body = u
    else:
        edges = spec.edges
        index = {e: k for k, e in enumerate(edges)}
        x = u0
        for c in range(spec.cells):
            base = c * len(edges)
            nodes = [x]
            for j in range(1, spec.states + 1):
                acc = None
                for i in range(j):
                    out = site_fn(base + index[(i, j)], nodes[i])
                    if out is not None:
                        acc = out if acc is None else acc + out
                nodes.append(Tensor(np.zeros(u0.shape)) if acc is None else acc)
            w, b = cell_convs[c]
            x = conv1d(concat_channels([nodes[-2], nodes[-1]]), w, b)
        body = x
    return u0 + body if spec.global_residual else body


def _context(spec: SpaceSpec, y: np.ndarray, op: DegradationOperator, seed: int) -> LayerContext:
    return LayerContext(np.asarray(y, dtype=np.float64), op, seed=seed, noise_std=spec.noise_std, roll_shift=spec.roll_shift)


@dataclass
class Site:
    candidates: list[OpInstance]
    alpha: Parameter


@dataclass
class RelaxedModel:
    spec: SpaceSpec
    sites: list[Site]
    cell_convs: list[tuple[Parameter, Parameter]] = field(default_factory=list)

    def theta(self) -> list[Parameter]:
        params = [p for s in self.sites for inst in s.candidates for p in inst.parameters()]
        return params + [p for wb in self.cell_convs for p in wb]

    def alphas(self) -> list[Parameter]:
        return [s.alpha for s in self.sites]

    def betas(self) -> np.ndarray:
        a = np.stack([s.alpha.data for s in self.sites])
        z = np.exp(a - a.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def forward(self, y: np.ndarray, op: DegradationOperator, seed: int = 0) -> Tensor:
        return forward_relaxed(self, y, op, seed)


@dataclass
class DiscreteNet:
    arch: DiscreteArch
    ops: list[OpInstance]
    cell_convs: list[tuple[Parameter, Parameter]] = field(default_factory=list)

    @property
    def spec(self) -> SpaceSpec:
        return self.arch.spec

    def theta(self) -> list[Parameter]:
        return [p for inst in self.ops for p in inst.parameters()] + [p for wb in self.cell_convs for p in wb]

    def forward(self, y: np.ndarray, op: DegradationOperator, seed: int = 0) -> Tensor:
        ctx = _context(self.spec, y, op, seed)
        u0 = Tensor(ctx.atf)
        return _run_body(self.spec, u0, lambda s, u: apply_op(self.ops[s], u, ctx, s), self.cell_convs)

    @classmethod
    def from_relaxed(cls, model: RelaxedModel, arch: DiscreteArch) -> "DiscreteNet":
        """Discrete network reusing (copies of) the supernet's weights for the chosen ops."""
        ops = [model.sites[s].candidates[c].copy() for s, c in enumerate(arch.choices)]
        convs = [(Parameter(w.data.copy()), Parameter(b.data.copy())) for w, b in model.cell_convs]
        return cls(arch, ops, convs)


def build_relaxed(spec: SpaceSpec, rng: np.random.Generator, op: DegradationOperator) -> RelaxedModel:
    candidates = [[op_init(k, rng, op, spec.hidden) for k in spec.opset] for _ in range(spec.n_sites)]
    sites = [Site(c, Parameter(rng.normal(0.0, ALPHA_INIT_STD, size=len(spec.opset)))) for c in candidates]
    convs = [_cell_conv(rng) for _ in range(spec.cells)] if spec.topology == "cell" else []
    return RelaxedModel(spec, sites, convs)


def forward_relaxed(model: RelaxedModel, y: np.ndarray, op: DegradationOperator, seed: int = 0) -> Tensor:
    """Supernet output for measurements ``y``; the state starts at u0 = A^T y."""
    ctx = _context(model.spec, y, op, seed)
    u0 = Tensor(ctx.atf)
    sites = model.sites
    return _run_body(
        model.spec,
        u0,
        lambda s, u: mixed_forward(sites[s].alpha, sites[s].candidates, u, ctx, s),
        model.cell_convs,
    )


def discretize(model: RelaxedModel) -> DiscreteArch:
    """Per-site argmax of the logits; ties go to the lowest opset index."""
    return DiscreteArch(model.spec, tuple(int(np.argmax(s.alpha.data)) for s in model.sites))


def build_discrete(arch: DiscreteArch, rng: np.random.Generator, op: DegradationOperator) -> DiscreteNet:
    spec = arch.spec
    ops = [op_init(k, rng, op, spec.hidden) for k in arch.kinds]
    convs = [_cell_conv(rng) for _ in range(spec.cells)] if spec.topology == "cell" else []
    return DiscreteNet(arch, ops, convs)


def random_arch(spec: SpaceSpec, rng: np.random.Generator) -> DiscreteArch:
    return DiscreteArch(spec, tuple(int(c) for c in rng.integers(0, len(spec.opset), size=spec.n_sites)))


def enumerate_archs(spec: SpaceSpec, limit: int = MAX_ENUMERATION) -> Iterator[DiscreteArch]:
    total = len(spec.opset) ** spec.n_sites
    if total > limit:
        raise SearchSpaceTooLarge(f"{total} architectures exceed the enumeration limit {limit}")
    for choices in itertools.product(range(len(spec.opset)), repeat=spec.n_sites):
        yield DiscreteArch(spec, choices)
