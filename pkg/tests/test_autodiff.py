import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dasinv.autodiff import (
    ContractViolation,
    Parameter,
    Tensor,
    backward,
    batchnorm1d,
    circular_shift,
    cnn_bank,
    conv1d,
    frozen,
    grad_check,
    inner,
    mse,
    no_grad,
    optimizer_step,
    relu,
    relu_patterns,
    scale,
    small_cnn,
    softmax,
    weighted_sum,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _vec(values):
    return np.asarray(values, dtype=float)[None, None, :]


# ---------------------------------------------------------------- conv1d


def test_conv_identity_kernel():
    out = conv1d(Tensor(_vec([1, 2, 3])), Tensor(np.array([[[0.0, 1.0, 0.0]]])), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, _vec([1, 2, 3]))


def test_conv_box_kernel_zero_padded():
    out = conv1d(Tensor(_vec([1, 2, 3])), Tensor(np.full((1, 1, 3), 1 / 3)))
    np.testing.assert_allclose(out.data, _vec([1, 2, 5 / 3]), rtol=1e-15)


def test_conv_zero_kernel_gives_bias():
    x = np.random.default_rng(0).standard_normal((2, 3, 7))
    out = conv1d(Tensor(x), Tensor(np.zeros((4, 3, 5))), Tensor(np.full(4, 2.5)))
    assert np.all(out.data == 2.5)


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(1)
    x, w, b = rng.standard_normal((2, 3, 9)), rng.standard_normal((4, 3, 5)), rng.standard_normal(4)
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    ref = np.zeros((2, 4, 9))
    for bi in range(2):
        for o in range(4):
            for i in range(9):
                ref[bi, o, i] = b[o] + np.sum(w[o] * xp[bi, :, i : i + 5])
    np.testing.assert_allclose(conv1d(Tensor(x), Tensor(w), Tensor(b)).data, ref, rtol=1e-12, atol=1e-12)


def test_conv_rejects_even_kernel_and_channel_mismatch():
    with pytest.raises(ValueError, match="odd"):
        conv1d(Tensor(np.zeros((1, 1, 5))), Tensor(np.zeros((1, 1, 2))))
    with pytest.raises(ValueError, match="channel"):
        conv1d(Tensor(np.zeros((1, 2, 5))), Tensor(np.zeros((1, 1, 3))))


# ---------------------------------------------------------------- batchnorm, relu


def test_batchnorm_constant_channel_is_zero():
    out = batchnorm1d(Tensor(np.full((2, 1, 4), 3.0)), Tensor(np.ones(1)), Tensor(np.zeros(1)))
    assert np.all(out.data == 0.0)


def test_batchnorm_already_standardized():
    out = batchnorm1d(Tensor(_vec([-1.0, 1.0])), Tensor(np.ones(1)), Tensor(np.zeros(1)), eps=1e-12)
    np.testing.assert_allclose(out.data, _vec([-1.0, 1.0]), rtol=1e-10)


def test_batchnorm_gamma_zero_gives_beta():
    x = np.random.default_rng(2).standard_normal((3, 2, 5))
    out = batchnorm1d(Tensor(x), Tensor(np.zeros(2)), Tensor(np.full(2, 5.0)))
    assert np.all(out.data == 5.0)


def test_batchnorm_rejects_single_value():
    with pytest.raises(ValueError):
        batchnorm1d(Tensor(np.zeros((1, 1, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)))


def test_relu_examples():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert np.all(relu(Tensor(-np.arange(1, 5.0))).data == 0)
    x = np.arange(1, 5.0)
    np.testing.assert_array_equal(relu(Tensor(x)).data, x)


# ---------------------------------------------------------------- elementwise, shift, mse


def test_elementwise_examples():
    np.testing.assert_array_equal((Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])).data, [4.0, 6.0])
    np.testing.assert_array_equal(scale(Tensor([1.0, 2.0]), 0.0).data, [0.0, 0.0])
    x = np.array([1.5, -2.0])
    np.testing.assert_array_equal((Tensor(x) * Tensor(np.ones(2))).data, x)


def test_shape_mismatch_is_an_error():
    with pytest.raises(ValueError, match="shape"):
        Tensor(np.zeros(2)) + Tensor(np.zeros(3))


def test_circular_shift_examples():
    np.testing.assert_array_equal(circular_shift(Tensor([1.0, 2.0, 3.0]), 1).data, [3.0, 1.0, 2.0])
    np.testing.assert_array_equal(circular_shift(Tensor([1.0, 2.0, 3.0]), 0).data, [1.0, 2.0, 3.0])


@given(arrays(float, st.integers(1, 20), elements=finite), st.integers(-50, 50))
def test_circular_shift_matches_roll_and_inverts(x, s):
    out = circular_shift(Tensor(x), s)
    np.testing.assert_array_equal(out.data, np.roll(x, s))
    np.testing.assert_array_equal(circular_shift(out, -s).data, x)


def test_mse_examples():
    assert mse(Tensor([1.0, 2.0]), np.array([1.0, 2.0])).item() == 0.0
    assert mse(Tensor([1.0, 1.0]), np.zeros(2)).item() == 1.0
    assert mse(Tensor([2.0, 0.0]), np.zeros(2)).item() == 2.0


# ---------------------------------------------------------------- backward


def test_hand_chain_rule():
    w = Parameter(np.array([2.0]))
    loss = mse(w * Tensor(np.array([1.0])), np.zeros(1))
    backward(loss)
    assert w.grad[0] == pytest.approx(4.0)


def test_constant_loss_gives_zero_grad():
    w = Parameter(np.array([2.0]))
    backward(mse(Tensor(np.array([3.0])), np.zeros(1)), [w])
    assert w.grad[0] == 0.0


def test_shared_parameter_accumulates():
    w = Parameter(np.array([3.0]))
    x = Tensor(np.array([1.0]))
    # loss = sum(w*x) + sum(2*w*x); dloss/dw = 3
    loss = inner(w * x, np.ones(1)) + inner(scale(w * x, 2.0), np.ones(1))
    backward(loss)
    assert w.grad[0] == pytest.approx(3.0)


def test_backward_needs_scalar():
    with pytest.raises(ValueError, match="scalar"):
        backward(Parameter(np.zeros(2)) + Tensor(np.zeros(2)))


def test_no_grad_and_frozen_stop_recording():
    w = Parameter(np.ones(3))
    with no_grad():
        assert not (w * Tensor(np.ones(3))).requires_grad
    with frozen([w]):
        assert not w.requires_grad
    assert w.requires_grad


# ---------------------------------------------------------------- grad_check


def test_grad_check_linear_is_exact():
    # small integer data keep the loss roundoff below the 1e-10 target
    x = Parameter(np.array([1.0, -2.0, 3.0, 0.0]))
    R = np.array([2.0, 1.0, -1.0, 0.5])
    assert grad_check(lambda: inner(scale(x, 3.0), R), [x]) <= 1e-10


def test_grad_check_relu_away_from_kink():
    x = Parameter(np.array([-2.0, -0.5, 0.7, 1.3]))
    R = np.array([1.0, -2.0, 0.5, 3.0])
    assert grad_check(lambda: inner(relu(x), R), [x]) <= 1e-6


def test_grad_check_reprobes_near_kink():
    # +-1e-5 around 1e-6 straddles the kink: a plain central difference gives 0.55
    x = Parameter(np.array([1e-6, -3e-6, 0.5]))
    stats = {}
    assert grad_check(lambda: inner(relu(x), np.ones(3)), [x], stats=stats) <= 1e-6
    assert stats == {"probes": 3, "kink_probes": 2}


def test_relu_patterns_see_fused_cnn():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 1, 9))
    w1, w2 = rng.standard_normal((4, 1, 3)), rng.standard_normal((1, 4, 3))
    with relu_patterns() as trace:
        small_cnn(x, *map(Parameter, (w1, np.zeros(4), np.ones(4), np.zeros(4), w2, np.zeros(1))))
        relu(x)
    assert [m.shape for m in trace] == [(4, 18), (2, 1, 9)]
    assert 0 < trace[0].mean() < 1


def test_grad_check_rejects_nondeterministic_fn():
    x = Parameter(np.ones(2))
    rng = np.random.default_rng(0)
    with pytest.raises(ContractViolation):
        grad_check(lambda: inner(x, rng.standard_normal(2)), [x])


@pytest.mark.parametrize("B,C,K", [(2, 3, 3), (1, 2, 5)])
def test_conv_and_batchnorm_gradients(B, C, K):
    rng = np.random.default_rng(B * 10 + K)
    x = Parameter(rng.standard_normal((B, 1, 8)))
    w = Parameter(rng.standard_normal((C, 1, K)))
    b = Parameter(rng.standard_normal(C))
    g, be = Parameter(rng.uniform(0.5, 2, C)), Parameter(rng.standard_normal(C))
    R = rng.standard_normal((B, C, 8))
    fn = lambda: inner(batchnorm1d(conv1d(x, w, b), g, be), R)
    assert grad_check(fn, [x, w, g, be]) <= 1e-6


def test_softmax_and_weighted_sum_gradients():
    rng = np.random.default_rng(4)
    a = Parameter(rng.standard_normal(3))
    terms = [Parameter(rng.standard_normal((2, 1, 5))) for _ in range(3)]
    R = rng.standard_normal((2, 1, 5))
    fn = lambda: inner(weighted_sum(softmax(a), terms), R)
    assert grad_check(fn, [a] + terms) <= 1e-7


def _cnn_params(rng, hidden=4):
    return [Parameter(rng.uniform(-0.6, 0.6, (hidden, 1, 3))), Parameter(rng.standard_normal(hidden)),
            Parameter(rng.uniform(0.5, 1.5, hidden)), Parameter(rng.standard_normal(hidden)),
            Parameter(rng.uniform(-0.3, 0.3, (1, hidden, 3))), Parameter(rng.standard_normal(1))]


def _composed_cnn(x, w1, b1, gamma, beta, w2, b2):
    return conv1d(relu(batchnorm1d(conv1d(x, w1, b1), gamma, beta)), w2, b2)


def test_fused_cnn_matches_composition():
    rng = np.random.default_rng(5)
    x = Parameter(rng.standard_normal((3, 1, 12)))
    params = _cnn_params(rng)
    R = rng.standard_normal((3, 1, 12))
    fused = small_cnn(x, *params)
    composed = _composed_cnn(x, *params)
    np.testing.assert_allclose(fused.data, composed.data, rtol=1e-12, atol=1e-12)
    backward(inner(fused, R))
    g_fused = [p.grad.copy() for p in [x] + params]
    for p in [x] + params:
        p.grad = None
    backward(inner(composed, R))
    for a, p in zip(g_fused, [x] + params):
        np.testing.assert_allclose(a, p.grad, rtol=1e-9, atol=1e-11)


def test_fused_cnn_gradients_and_structural_b1_zero():
    rng = np.random.default_rng(6)
    x = Parameter(rng.standard_normal((2, 1, 10)))
    w1, b1, gamma, beta, w2, b2 = _cnn_params(rng)
    R = rng.standard_normal((2, 1, 10))
    fn = lambda: inner(small_cnn(x, w1, b1, gamma, beta, w2, b2), R)
    assert grad_check(fn, [x, w1, gamma, beta, w2, b2]) <= 1e-6
    backward(fn(), [b1])
    # batch-norm removes any per-channel constant added before it
    assert np.all(b1.grad == 0.0)


def test_cnn_bank_matches_separate_networks():
    rng = np.random.default_rng(7)
    x = Parameter(rng.standard_normal((3, 1, 9)))
    banks = [_cnn_params(rng) for _ in range(3)]
    outs = cnn_bank(x, banks)
    Rs = [rng.standard_normal((3, 1, 9)) for _ in banks]
    backward(inner(outs[0], Rs[0]) + inner(outs[1], Rs[1]) + inner(outs[2], Rs[2]))
    g_bank = [p.grad.copy() for p in [x] + [q for b in banks for q in b]]
    for p in [x] + [q for b in banks for q in b]:
        p.grad = None
    sep = [small_cnn(x, *b) for b in banks]
    for o, s in zip(outs, sep):
        np.testing.assert_allclose(o.data, s.data, rtol=1e-12, atol=1e-12)
    backward(inner(sep[0], Rs[0]) + inner(sep[1], Rs[1]) + inner(sep[2], Rs[2]))
    for a, p in zip(g_bank, [x] + [q for b in banks for q in b]):
        np.testing.assert_allclose(a, p.grad, rtol=1e-9, atol=1e-11)


# ---------------------------------------------------------------- optimizers


def test_gd_steps():
    p = Parameter(np.array([1.0]))
    p.grad = np.array([0.5])
    optimizer_step("gd", [p], 0.1)
    assert p.data[0] == pytest.approx(0.95)
    p = Parameter(np.array([1.0]))
    p.grad = np.array([0.0])
    optimizer_step("gd", [p], 0.1, weight_decay=0.1)
    assert p.data[0] == pytest.approx(0.99)
    assert p.grad is None


@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3), st.floats(1e-4, 1e-1))
@settings(max_examples=50)
def test_adam_first_step_moves_by_lr(g, lr):
    p = Parameter(np.array([0.0]))
    p.grad = np.array([g])
    optimizer_step("adam", [p], lr)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    assert p.data[0] == pytest.approx(-lr * g / (abs(g) + 1e-8), rel=1e-12)


def test_optimizer_requires_gradients():
    with pytest.raises(ContractViolation):
        optimizer_step("gd", [Parameter(np.zeros(1))], 0.1)
    with pytest.raises(ValueError):
        p = Parameter(np.zeros(1))
        p.grad = np.zeros(1)
        optimizer_step("sgd", [p], 0.1)
