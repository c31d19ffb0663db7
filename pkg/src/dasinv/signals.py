"""Cosine test signals, blur / blur+subsample operators, noise and PSNR."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .autodiff import Tensor, linear_map

__all__ = [
    "CosineConfig",
    "DegradationOperator",
    "SignalBatch",
    "sample_cosine_batch",
    "gaussian_kernel",
    "apply_forward",
    "apply_adjoint",
    "make_batch",
    "psnr",
    "operator_norm_estimate",
    "make_operator",
]


@dataclass(frozen=True)
class CosineConfig:
    n: int = 50
    interval: tuple[float, float] = (-math.pi / 2, math.pi / 2)
    freq_range: tuple[float, float] = (0.0, 2 * math.pi)
    noise_std: float = 0.01

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("CosineConfig.n must be at least 2")
        if self.noise_std < 0:
            raise ValueError("CosineConfig.noise_std must be non-negative")
        if not self.freq_range[1] > self.freq_range[0]:
            raise ValueError("CosineConfig.freq_range must be non-empty")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.interval[0], self.interval[1], self.n)


def sample_cosine_batch(rng: np.random.Generator, batch: int, cfg: CosineConfig = CosineConfig(), *, freq=None, offset_x=None, offset_y=None) -> np.ndarray:
    """Draw ``batch`` signals cos(f*w + Ox) + Oy on the sampling grid, shape [B,1,N].

    Passing ``freq``/``offset_x``/``offset_y`` pins those draws (scalars or
    per-sample arrays); the rng is still advanced identically.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    f = rng.uniform(cfg.freq_range[0], cfg.freq_range[1], size=batch)
    ox = rng.standard_normal(batch)
    oy = rng.standard_normal(batch)
    if freq is not None:
        f = np.broadcast_to(np.asarray(freq, dtype=np.float64), (batch,))
    if offset_x is not None:
        ox = np.broadcast_to(np.asarray(offset_x, dtype=np.float64), (batch,))
    if offset_y is not None:
        oy = np.broadcast_to(np.asarray(offset_y, dtype=np.float64), (batch,))
    x = np.cos(f[:, None] * cfg.grid[None, :] + ox[:, None]) + oy[:, None]
    return x[:, None, :]


def gaussian_kernel(size: int = 7, sigma: float = 0.2, grid_spacing: float = 1.0) -> np.ndarray:
    """Normalized Gaussian weights on offsets -size//2..size//2 (sigma in grid units of ``grid_spacing``)."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if not sigma > 0 or not grid_spacing > 0:
        raise ValueError("sigma and grid_spacing must be positive")
    offsets = (np.arange(size) - size // 2) * grid_spacing
    if math.isinf(sigma):
        w = np.ones(size)
    else:
        w = np.exp(-(offsets**2) / (2 * sigma**2))
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class DegradationOperator:
    """Zero-padded blur, optionally followed by keeping every ``factor``-th sample."""

    kind: str
    n: int
    kernel: np.ndarray = field(repr=False)
    factor: int = 1
    sigma_b: float = 0.2

    def __post_init__(self):
        if self.kind not in ("blur", "downsample"):
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.kernel.ndim != 1 or self.kernel.size % 2 == 0:
            raise ValueError("kernel must be 1-D with odd length")
        if self.factor < 1:
            raise ValueError("factor must be >= 1")

    @property
    def m(self) -> int:
        return -(-self.n // self.factor)

    @cached_property
    def norm(self) -> float:
        return operator_norm_estimate(self)

    def _blur(self, x: np.ndarray) -> np.ndarray:
        K = self.kernel.size
        c = K // 2
        xp = np.zeros(x.shape[:-1] + (self.n + 2 * c,))
        xp[..., c : c + self.n] = x
        out = self.kernel[0] * xp[..., 0 : self.n]
        for j in range(1, K):
            out += self.kernel[j] * xp[..., j : j + self.n]
        return out[..., :: self.factor]

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense [m, n] matrix of the operator (n is small, so products are cheap)."""
        return np.ascontiguousarray(self._blur(np.eye(self.n)).T)

    @cached_property
    def gram_matrix(self) -> np.ndarray:
        return self.matrix.T @ self.matrix

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n:
            raise ValueError(f"operator expects length {self.n}, got {x.shape[-1]}")
        return _rowwise(x, self.matrix.T)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        if y.shape[-1] != self.m:
            raise ValueError(f"adjoint expects length {self.m}, got {y.shape[-1]}")
        return _rowwise(y, self.matrix)

    def gram(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n:
            raise ValueError(f"operator expects length {self.n}, got {x.shape[-1]}")
        return _rowwise(x, self.gram_matrix)


def _rowwise(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    # a single 2-D product; stacked [B,1,n] @ [n,k] is much slower
    x = np.asarray(x, dtype=np.float64)
    return (x.reshape(-1, x.shape[-1]) @ mat).reshape(x.shape[:-1] + (mat.shape[1],))


def make_operator(kind: str = "blur", n: int = 50, sigma_b: float = 0.2, size: int = 7, factor: int | None = None) -> DegradationOperator:
    """Build the blur (or blur+subsample) operator for signals on [-pi/2, pi/2].

    ``sigma_b`` is measured in signal-domain units, i.e. converted with the
    grid spacing pi/(n-1).
    """
    if factor is None:
        factor = 4 if kind == "downsample" else 1
    kernel = gaussian_kernel(size, sigma_b, math.pi / (n - 1))
    return DegradationOperator(kind=kind, n=n, kernel=kernel, factor=factor, sigma_b=sigma_b)


def apply_forward(op: DegradationOperator, x):
    """Differentiable A x for tensors, plain A x for arrays."""
    if isinstance(x, Tensor):
        return linear_map(x, op.forward, op.adjoint)
    return op.forward(np.asarray(x, dtype=np.float64))


def apply_adjoint(op: DegradationOperator, y):
    if isinstance(y, Tensor):
        return linear_map(y, op.adjoint, op.forward)
    return op.adjoint(np.asarray(y, dtype=np.float64))


@dataclass
class SignalBatch:
    clean: np.ndarray
    measured: np.ndarray


def make_batch(rng: np.random.Generator, op: DegradationOperator, cfg: CosineConfig, batch: int) -> SignalBatch:
    if cfg.n != op.n:
        raise ValueError(f"signal length {cfg.n} does not match operator length {op.n}")
    clean = sample_cosine_batch(rng, batch, cfg)
    measured = op.forward(clean)
    if cfg.noise_std > 0:
        measured = measured + cfg.noise_std * rng.standard_normal(measured.shape)
    return SignalBatch(clean, measured)


MSE_FLOOR = 1e-12


def psnr(pred, target, peak: float = 1.0) -> float:
    """Batch-mean of per-sample 10*log10(peak^2 / MSE)."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"psnr: shape mismatch {p.shape} vs {t.shape}")
    if not peak > 0:
        raise ValueError("psnr: peak must be positive")
    err = (p - t).reshape(p.shape[0], -1)
    per_sample = np.maximum(np.mean(err * err, axis=1), MSE_FLOOR)
    return float(np.mean(10.0 * np.log10(peak**2 / per_sample)))


def operator_norm_estimate(op, iters: int = 2000, seed: int = 0) -> float:
    """Spectral norm of ``op`` by power iteration on A^T A.

    ``op`` needs ``n`` and ``gram``, or forward/adjoint methods. The error
    shrinks like (s2/s1)^(2*iters); the blur operator has s2/s1 ~ 0.98, so a
    few hundred iterations are not enough for 1e-6 accuracy.
    """
    gram = op.gram if hasattr(op, "gram") else (lambda v: op.adjoint(op.forward(v)))
    v = np.random.default_rng(seed).standard_normal(op.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = gram(v)
        lam = float(np.dot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return math.sqrt(max(lam, 0.0))
