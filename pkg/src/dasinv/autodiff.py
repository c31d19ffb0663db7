"""Minimal reverse-mode automatic differentiation over float64 arrays.

Graphs are built define-by-run: every primitive returns a ``Tensor`` that
remembers its parents and a closure mapping the output gradient to parent
gradients. ``backward`` walks the graph in reverse topological order.

Only the primitives needed by the reconstruction operations are provided.
Signal tensors use the ``[batch, channels, length]`` convention.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ContractViolation",
    "Tensor",
    "Parameter",
    "no_grad",
    "frozen",
    "backward",
    "conv1d",
    "batchnorm1d",
    "relu",
    "relu_patterns",
    "add",
    "sub",
    "mul",
    "scale",
    "elementwise",
    "circular_shift",
    "mse",
    "inner",
    "softmax",
    "weighted_sum",
    "concat_channels",
    "linear_map",
    "small_cnn",
    "cnn_bank",
    "grad_check",
    "optimizer_step",
]


class ContractViolation(RuntimeError):
    """A caller broke a precondition that is not a plain bad argument."""


_local = threading.local()


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def relu_patterns():
    """Collect the on/off mask of every ReLU evaluated inside the block."""
    prev = getattr(_local, "relu_trace", None)
    trace: list[np.ndarray] = []
    _local.relu_trace = trace
    try:
        yield trace
    finally:
        _local.relu_trace = prev


def _relu_trace() -> list | None:
    return getattr(_local, "relu_trace", None)


@contextlib.contextmanager
def frozen(params: Iterable["Tensor"]):
    """Temporarily stop tracking gradients for ``params``."""
    params = list(params)
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, prev):
            p.requires_grad = flag


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, Tensor) and other.data.size == 1 and self.data.size != 1:
            return scale(self, other)
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A trainable tensor carrying its own optimizer state."""

    __slots__ = ("state", "step")

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.state: dict[str, np.ndarray] = {}
        self.step = 0

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves listed in ``params`` that the loss does not depend on get a zero
    gradient, so an optimizer step can always run afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    for p in params or ():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- primitives


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Zero-padded 'same' 1D convolution (cross-correlation), odd kernels only."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ValueError("conv1d expects x [B,Cin,L] and w [Cout,Cin,K]")
    B, cin, L = x.shape
    cout, wcin, K = w.shape
    if wcin != cin:
        raise ValueError(f"conv1d channel mismatch: x has {cin}, w expects {wcin}")
    if K % 2 == 0:
        raise ValueError(f"conv1d needs an odd kernel size, got {K}")
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (cout,):
            raise ValueError(f"conv1d bias must have shape ({cout},), got {b.shape}")
    p = K // 2
    xp = np.zeros((B, cin, L + 2 * p))
    xp[:, :, p : p + L] = x.data
    cols = sliding_window_view(xp, L, axis=2).reshape(B, cin * K, L)
    wf = w.data.reshape(cout, cin * K)
    out = np.matmul(wf, cols)
    if b is not None:
        out += b.data[None, :, None]

    def _back(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(wf.T, g).reshape(B, cin, K, L)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, :, k : k + L] += gcols[:, :, k]
            gx = gxp[:, :, p : p + L]
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, _back)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with statistics of the current batch."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 3:
        raise ValueError("batchnorm1d expects [B,C,L]")
    B, C, L = x.shape
    n = B * L
    if n < 2:
        raise ValueError("batchnorm1d needs at least two values per channel")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError("batchnorm1d gamma/beta must have one entry per channel")
    mean = x.data.mean(axis=(0, 2), keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=(0, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    def _back(g):
        gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None]
            gx = inv * (
                gxhat
                - gxhat.mean(axis=(0, 2), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(0, 2), keepdims=True)
            )
        return gx, gg, gb

    return _node(out, (x, gamma, beta), _back)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    if (trace := _relu_trace()) is not None:
        trace.append(mask.copy())
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        return _node(a.data + b, (a,), lambda g: (g,))
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        return _node(a.data - b, (a,), lambda g: (g,))
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scale(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None),
    )


def scale(x, s) -> Tensor:
    """Multiply by a python scalar or a one-element tensor."""
    x = _as_tensor(x)
    if isinstance(s, Tensor):
        if s.data.size != 1:
            raise ValueError("scale factor tensor must hold a single value")
        sv = s.data.reshape(()).item()

        def _back(g):
            gx = g * sv if x.requires_grad else None
            gs = np.reshape(np.vdot(g, x.data), s.shape) if s.requires_grad else None
            return gx, gs

        return _node(x.data * sv, (x, s), _back)
    sv = float(s)
    return _node(x.data * sv, (x,), lambda g: (g * sv,))


def elementwise(kind: str, a, b) -> Tensor:
    ops = {"add": add, "sub": sub, "mul": mul, "scale": scale}
    if kind not in ops:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return ops[kind](a, b)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def circular_shift(x: Tensor, s: int) -> Tensor:
    """out[..., i] = x[..., (i - s) mod L] along the last axis."""
    x = _as_tensor(x)
    s = int(s)
    return _node(_roll(x.data, s), (x,), lambda g: (_roll(g, -s),))


def _roll(a: np.ndarray, s: int) -> np.ndarray:
    # np.roll along the last axis, without its generic-axis overhead
    s %= a.shape[-1]
    if s == 0:
        return a.copy()
    out = np.empty_like(a)
    out[..., s:] = a[..., :-s]
    out[..., :s] = a[..., -s:]
    return out


def mse(pred: Tensor, target) -> Tensor:
    pred = _as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size
    return _node(np.array(np.vdot(diff, diff) / n), (pred,), lambda g: (g * (2.0 / n) * diff,))


def inner(x: Tensor, weights) -> Tensor:
    """Scalar sum(x * weights) against a constant array."""
    x = _as_tensor(x)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"inner: shape mismatch {x.shape} vs {w.shape}")
    return _node(np.array(np.vdot(x.data, w)), (x,), lambda g: (g * w,))


def softmax(alpha: Tensor) -> Tensor:
    alpha = _as_tensor(alpha)
    if alpha.data.ndim != 1 or alpha.data.size == 0:
        raise ValueError("softmax expects a non-empty 1-D tensor")
    z = np.exp(alpha.data - alpha.data.max())
    beta = z / z.sum()
    return _node(beta, (alpha,), lambda g: (beta * (g - np.vdot(g, beta)),))


def weighted_sum(weights: Tensor, terms: Sequence[Tensor | None]) -> Tensor:
    """sum_t weights[t] * terms[t]; ``None`` terms are treated as zeros."""
    weights = _as_tensor(weights)
    if weights.shape != (len(terms),):
        raise ValueError("weighted_sum: need one weight per term")
    present = [t for t in terms if t is not None]
    if not present:
        raise ValueError("weighted_sum: at least one non-zero term is required")
    shape = present[0].shape
    out = np.zeros(shape)
    for wt, t in zip(weights.data, terms):
        if t is not None:
            if t.shape != shape:
                raise ValueError("weighted_sum: terms differ in shape")
            out += wt * t.data
    parents = (weights,) + tuple(present)

    def _back(g):
        gw = None
        if weights.requires_grad:
            gw = np.array([0.0 if t is None else np.vdot(g, t.data) for t in terms])
        grads = [g * wt if t.requires_grad else None for wt, t in zip(weights.data, terms) if t is not None]
        return (gw, *grads)

    return _node(out, parents, _back)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + sizes)

    def _back(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _node(out, tuple(tensors), _back)


def linear_map(x: Tensor, forward: Callable[[np.ndarray], np.ndarray], adjoint: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Apply a fixed linear operator; its gradient is the adjoint."""
    x = _as_tensor(x)
    return _node(forward(x.data), (x,), lambda g: (adjoint(g),))


# -------------------------------------------------- fused conv-bn-relu-conv


def _shift_stack(x: np.ndarray, K: int) -> np.ndarray:
    # S[k, :, l] = x[:, l + k - K//2], zero outside
    B, L = x.shape
    p = K // 2
    S = np.zeros((K, B, L))
    for k in range(K):
        d = k - p
        if d < 0:
            S[k, :, -d:] = x[:, : L + d]
        elif d > 0:
            S[k, :, : L - d] = x[:, d:]
        else:
            S[k] = x
    return S


def _gather_shifts(Z: np.ndarray) -> np.ndarray:
    # out[:, l] = sum_k Z[k, :, l + k - K//2]
    K, B, L = Z.shape
    p = K // 2
    out = Z[p].copy()
    for k in range(K):
        d = k - p
        if d < 0:
            out[:, -d:] += Z[k, :, : L + d]
        elif d > 0:
            out[:, : L - d] += Z[k, :, d:]
    return out


def _scatter_shifts(G: np.ndarray) -> np.ndarray:
    # adjoint of _shift_stack: out[:, l] = sum_k G[k, :, l - (k - K//2)]
    K, B, L = G.shape
    p = K // 2
    out = G[p].copy()
    for k in range(K):
        d = k - p
        if d < 0:
            out[:, : L + d] += G[k, :, -d:]
        elif d > 0:
            out[:, d:] += G[k, :, : L - d]
    return out


def _cnn_bank(x: Tensor, banks: Sequence[Sequence[Tensor]], eps: float):
    """Shared core of ``small_cnn`` and ``cnn_bank``.

    Because the first convolution has one input channel, its per-channel batch
    variance is w S w^T with S the K x K covariance of the shifted input, and
    the normalization folds into the convolution weights. The first bias is
    cancelled by the normalization (its gradient is exactly zero).
    """
    if x.data.ndim != 3 or x.shape[1] != 1:
        raise ValueError("small_cnn expects x of shape [B,1,L]")
    P = len(banks)
    if P == 0 or any(len(b) != 6 for b in banks):
        raise ValueError("each bank needs (w1, b1, gamma, beta, w2, b2)")
    C, _, K = banks[0][0].shape
    for w1, b1, gamma, beta, w2, b2 in banks:
        if w1.shape != (C, 1, K) or w2.shape != (1, C, K) or K % 2 == 0:
            raise ValueError("small_cnn: inconsistent or even-sized kernels")
    B, _, L = x.shape
    n = B * L
    if n < 2:
        raise ValueError("small_cnn: batch normalization needs at least two values")
    X = _shift_stack(x.data.reshape(B, L), K).reshape(K, n)
    # centered shifts plus a row of ones, so one product also adds beta
    Xa = np.empty((K + 1, n))
    Xc = Xa[:K]
    np.subtract(X, X.mean(axis=1)[:, None], out=Xc)
    Xa[K] = 1.0
    S = (Xc @ Xc.T) / n
    W1 = np.concatenate([b[0].data.reshape(C, K) for b in banks])
    gamma = np.concatenate([b[2].data for b in banks])
    beta = np.concatenate([b[3].data for b in banks])
    var = np.einsum("ck,kl,cl->c", W1, S, W1)
    inv = 1.0 / np.sqrt(var + eps)
    gi = gamma * inv
    r = np.hstack([W1 * gi[:, None], beta[:, None]]) @ Xa
    if (trace := _relu_trace()) is not None:
        trace.append(r > 0)
    np.maximum(r, 0.0, out=r)
    W2 = [b[4].data.reshape(C, K).T for b in banks]  # [K, C] each
    out = np.empty((P, B, 1, L))
    for q in range(P):
        out[q, :, 0] = _gather_shifts((W2[q] @ r[q * C : (q + 1) * C]).reshape(K, B, L))
        out[q] += banks[q][5].data.reshape(())
    flat = [t for b in banks for t in b]

    def _back(g):
        grads: list[np.ndarray | None] = [None] * (1 + 6 * P)
        ga = np.empty((P * C, n))
        for q in range(P):
            G = _shift_stack(g[q].reshape(B, L)[:, ::-1], K)[:, :, ::-1].reshape(K, n)
            rq = r[q * C : (q + 1) * C]
            if banks[q][4].requires_grad:
                grads[1 + 6 * q + 4] = (G @ rq.T).T.reshape(1, C, K)
            if banks[q][5].requires_grad:
                grads[1 + 6 * q + 5] = np.reshape(g[q].sum(), (1,))
            np.matmul(W2[q].T, G, out=ga[q * C : (q + 1) * C])
        if not (x.requires_grad or any(t.requires_grad for b in banks for t in b[:4])):
            return tuple(grads)
        ga *= (r > 0).view(np.uint8)  # relu derivative; uint8 multiplies faster than bool
        Ma = ga @ Xa.T
        M, gsum = Ma[:, :K], Ma[:, K]
        ggam = inv * np.einsum("ck,ck->c", W1, M)  # sum over (b,l) of ga * xhat
        proj = gamma * ggam / n
        gW1 = gi[:, None] * M - (inv * inv * proj * n)[:, None] * (W1 @ S)
        for q in range(P):
            sl = slice(q * C, (q + 1) * C)
            w1, b1, gm, bt = banks[q][:4]
            base = 1 + 6 * q
            if w1.requires_grad:
                grads[base] = gW1[sl].reshape(C, 1, K)
            if b1.requires_grad:
                grads[base + 1] = np.zeros(C)
            if gm.requires_grad:
                grads[base + 2] = ggam[sl]
            if bt.requires_grad:
                grads[base + 3] = gsum[sl]
        if x.requires_grad:
            gX = (W1 * gi[:, None]).T @ ga
            gX -= (W1.T @ (gi * gsum / n))[:, None]
            gX -= (W1.T @ ((inv * inv * proj)[:, None] * W1)) @ Xc
            grads[0] = _scatter_shifts(gX.reshape(K, B, L)).reshape(B, 1, L)
        return tuple(grads)

    return out, (x, *flat), _back


def small_cnn(x: Tensor, w1: Tensor, b1: Tensor, gamma: Tensor, beta: Tensor, w2: Tensor, b2: Tensor, eps: float = 1e-5) -> Tensor:
    """conv1d -> batchnorm1d -> relu -> conv1d for single-channel signals.

    Same function as composing the generic primitives, in fewer array passes.
    """
    out, parents, back = _cnn_bank(_as_tensor(x), [(w1, b1, gamma, beta, w2, b2)], eps)
    return _node(out[0], parents, lambda g: back(g[None]))


def cnn_bank(x: Tensor, banks: Sequence[Sequence[Tensor]], eps: float = 1e-5) -> list[Tensor]:
    """Several independent ``small_cnn`` applied to the same input at once."""
    out, parents, back = _cnn_bank(_as_tensor(x), banks, eps)
    stacked = _node(out, parents, back)
    return [_take(stacked, q) for q in range(len(banks))]


def _take(t: Tensor, q: int) -> Tensor:
    def _back(g):
        full = np.zeros(t.shape)
        full[q] = g
        return (full,)

    return _node(t.data[q], (t,), _back)


# ------------------------------------------------------------ checks, steps


def _probe(fn, flat, i, h) -> tuple[float, bool]:
    # central difference, and whether any ReLU switched between the two points
    orig = flat[i]
    hi, lo = orig + h, orig - h
    with relu_patterns() as up:
        flat[i] = hi
        fp = fn().item()
    with relu_patterns() as down:
        flat[i] = lo
        fm = fn().item()
    flat[i] = orig
    smooth = len(up) == len(down) and all(np.array_equal(a, b) for a, b in zip(up, down))
    # divide by the step actually taken after rounding
    return (fp - fm) / (hi - lo), smooth


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               stats: dict | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the loss from the current values of ``params`` and be
    deterministic; stochastic layers have to be run with frozen noise. A probe
    whose +-eps points straddle a ReLU kink does not estimate the derivative;
    it is repeated with a 10x smaller step (down to ``eps * 1e-4``). ``stats``,
    if given, receives the number of probes and of such kink probes.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss, params)
    if fn().item() != loss.item():
        raise ContractViolation("grad_check: fn is not deterministic")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    probes = kinks = 0
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                h = eps
                num, smooth = _probe(fn, flat, i, h)
                kinks += not smooth
                while not smooth and h > eps * 1e-4:
                    h /= 10
                    num, smooth = _probe(fn, flat, i, h)
                probes += 1
                denom = max(abs(gflat[i]), abs(num), 1e-8)
                worst = max(worst, abs(gflat[i] - num) / denom)
    for p in params:
        p.grad = None
    if stats is not None:
        stats["probes"] = stats.get("probes", 0) + probes
        stats["kink_probes"] = stats.get("kink_probes", 0) + kinks
    return worst


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def optimizer_step(kind: str, params: Sequence[Parameter], lr: float, weight_decay: float = 0.0) -> None:
    """One gradient-descent or Adam update; gradients are cleared afterwards.

    Weight decay enters as ``grad + weight_decay * p`` before the update.
    """
    if kind not in ("gd", "adam"):
        raise ValueError(f"unknown optimizer {kind!r}")
    for p in params:
        if p.grad is None:
            raise ContractViolation("optimizer_step called before gradients were populated")
    for p in params:
        g = p.grad + weight_decay * p.data if weight_decay else p.grad
        p.step += 1
        if kind == "gd":
            p.data = p.data - lr * g
        else:
            b1, b2 = ADAM_BETAS
            m = p.state.get("m")
            v = p.state.get("v")
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            p.state["m"], p.state["v"] = m, v
            mhat = m / (1 - b1**p.step)
            vhat = v / (1 - b2**p.step)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        p.grad = None
