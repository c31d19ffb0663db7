import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dasinv.autodiff import Parameter, grad_check, inner
from dasinv.signals import (
    CosineConfig,
    DegradationOperator,
    apply_adjoint,
    apply_forward,
    gaussian_kernel,
    make_batch,
    make_operator,
    operator_norm_estimate,
    psnr,
    sample_cosine_batch,
)

DELTA = np.array([0, 0, 0, 1.0, 0, 0, 0])


def _dense(n, kernel, factor):
    c = kernel.size // 2
    A = np.array([[kernel[j - i + c] if abs(i - j) <= c else 0.0 for j in range(n)] for i in range(n)])
    return A[::factor]


# ---------------------------------------------------------------- signals


def test_forced_draws():
    rng = np.random.default_rng(0)
    cfg = CosineConfig()
    np.testing.assert_array_equal(sample_cosine_batch(rng, 2, cfg, freq=0, offset_x=0, offset_y=0), 1.0)
    x = sample_cosine_batch(rng, 1, cfg, freq=0, offset_x=math.pi / 2, offset_y=0)
    np.testing.assert_allclose(x, 0.0, atol=1e-15)
    x = sample_cosine_batch(rng, 1, cfg, freq=2, offset_x=0, offset_y=1)[0, 0]
    np.testing.assert_allclose(x, np.cos(2 * cfg.grid) + 1, rtol=1e-15)
    np.testing.assert_allclose(x, x[::-1], atol=1e-14)


def test_pinned_draws_advance_rng_identically():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    sample_cosine_batch(a, 3, freq=1.0)
    sample_cosine_batch(b, 3)
    assert a.random() == b.random()


def test_grid_spacing():
    grid = CosineConfig().grid
    assert grid.size == 50
    np.testing.assert_allclose(np.diff(grid), math.pi / 49)


# ---------------------------------------------------------------- kernel


def test_kernel_flat_limit():
    np.testing.assert_allclose(gaussian_kernel(7, math.inf), np.full(7, 1 / 7))


@given(st.floats(1e-3, 1e3), st.sampled_from([1, 3, 5, 7, 9]))
def test_kernel_symmetric_normalized(sigma, size):
    w = gaussian_kernel(size, sigma)
    np.testing.assert_allclose(w, w[::-1], rtol=0, atol=0)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)


def test_kernel_center_weight_from_formula():
    sigma_samples = 0.2 * 49 / math.pi
    assert sigma_samples == pytest.approx(3.12, abs=5e-3)
    e = np.exp(-np.arange(-3, 4) ** 2 / (2 * sigma_samples**2))
    w = gaussian_kernel(7, 0.2, math.pi / 49)
    assert w[3] == pytest.approx(1 / e.sum(), rel=1e-14)


def test_kernel_rejects_even_size():
    with pytest.raises(ValueError):
        gaussian_kernel(6)


# ---------------------------------------------------------------- operators


def test_delta_kernel_is_identity():
    op = DegradationOperator("blur", 50, DELTA)
    x = np.random.default_rng(1).standard_normal((3, 1, 50))
    np.testing.assert_array_equal(op.forward(x), x)
    np.testing.assert_array_equal(op.adjoint(x), x)


def test_constant_signal_interior_and_boundary():
    op = make_operator("blur")
    y = op.forward(np.full(50, 2.0))
    np.testing.assert_allclose(y[3:-3], 2.0, rtol=1e-14)
    assert np.all(y[:3] < 2.0) and np.all(y[-3:] < 2.0)


def test_downsample_length_and_dense_matrix():
    op = make_operator("downsample")
    assert op.m == 13 == math.ceil(50 / 4)
    A = _dense(50, op.kernel, 4)
    assert A.shape == (13, 50)
    np.testing.assert_allclose(op.matrix, A, rtol=0, atol=1e-16)


def test_subsampling_transpose_inserts_zeros():
    op = DegradationOperator("downsample", 50, DELTA, factor=4)
    e0 = np.zeros(13)
    e0[0] = 1
    out = op.adjoint(e0)
    expected = np.zeros(50)
    expected[0] = 1
    np.testing.assert_array_equal(out, expected)


@pytest.mark.parametrize("kind", ["blur", "downsample"])
def test_adjoint_identity(kind):
    op = make_operator(kind)
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y = rng.standard_normal(op.n), rng.standard_normal(op.m)
        err = abs(op.forward(x) @ y - x @ op.adjoint(y))
        assert err <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)


def test_batched_application_matches_rowwise():
    op = make_operator("downsample")
    x = np.random.default_rng(3).standard_normal((4, 1, 50))
    out = op.forward(x)
    assert out.shape == (4, 1, 13)
    for i in range(4):
        np.testing.assert_allclose(out[i, 0], op.matrix @ x[i, 0], rtol=1e-14)
    np.testing.assert_allclose(op.gram(x), op.adjoint(op.forward(x)), rtol=1e-12, atol=1e-14)


def test_length_mismatch():
    op = make_operator("blur")
    with pytest.raises(ValueError):
        op.forward(np.zeros(49))
    with pytest.raises(ValueError):
        make_operator("downsample").adjoint(np.zeros(50))


def test_tensor_application_is_differentiable():
    op = make_operator("downsample")
    rng = np.random.default_rng(4)
    x = Parameter(rng.standard_normal((2, 1, 50)))
    y = Parameter(rng.standard_normal((2, 1, 13)))
    R1, R2 = rng.standard_normal((2, 1, 13)), rng.standard_normal((2, 1, 50))
    assert grad_check(lambda: inner(apply_forward(op, x), R1), [x]) <= 1e-8
    assert grad_check(lambda: inner(apply_adjoint(op, y), R2), [y]) <= 1e-8


# ---------------------------------------------------------------- noise


def test_noiseless_measurement_is_exact():
    op = make_operator("blur")
    b = make_batch(np.random.default_rng(0), op, CosineConfig(noise_std=0.0), 5)
    np.testing.assert_array_equal(b.measured, op.forward(b.clean))


def test_noise_variance():
    op = make_operator("downsample")
    b = make_batch(np.random.default_rng(1), op, CosineConfig(noise_std=0.01), 10_000)
    per = np.sum((b.measured - op.forward(b.clean)) ** 2, axis=(1, 2)) / op.m
    assert per.mean() == pytest.approx(1e-4, rel=0.05)


def test_batches_from_different_streams_differ():
    op = make_operator("blur")
    a = make_batch(np.random.default_rng(1), op, CosineConfig(), 4)
    b = make_batch(np.random.default_rng(2), op, CosineConfig(), 4)
    assert not np.allclose(a.clean, b.clean)


# ---------------------------------------------------------------- metrics


def test_psnr_examples():
    t = np.zeros((1, 1, 4))
    assert psnr(t + 0.1, t) == pytest.approx(20.0)
    assert psnr(t, t) == pytest.approx(120.0)
    assert psnr(t + 1.0, t) == pytest.approx(0.0)


def test_psnr_is_batch_mean_of_per_sample_values():
    t = np.zeros((2, 1, 4))
    p = t.copy()
    p[0] += 0.1
    p[1] += 1.0
    assert psnr(p, t) == pytest.approx(10.0)


def test_norm_estimates():
    assert operator_norm_estimate(DegradationOperator("blur", 50, DELTA)) == pytest.approx(1.0, abs=1e-12)

    class Doubling:
        n = 10

        def forward(self, x):
            return 2 * x

        def adjoint(self, y):
            return 2 * y

    assert operator_norm_estimate(Doubling()) == pytest.approx(2.0, abs=1e-12)


@settings(deadline=None, max_examples=10)
@given(st.sampled_from(["blur", "downsample"]), st.floats(0.08, 1.0))
def test_norm_matches_svd(kind, sigma):
    # below ~0.08 the two leading singular values nearly coincide and power
    # iteration needs far more steps
    op = make_operator(kind, sigma_b=sigma)
    s = np.linalg.svd(_dense(50, op.kernel, op.factor), compute_uv=False)[0]
    assert op.norm == pytest.approx(s, abs=1e-6)
