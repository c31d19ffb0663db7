import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dasinv.autodiff import no_grad
from dasinv.engine import (
    PRESETS,
    HyperParams,
    TrainSchedule,
    das_search,
    das_single_search,
    evaluate_psnr,
    lr_schedule,
    train_architecture,
)
from dasinv.ops import OperationKind
from dasinv.signals import CosineConfig, make_batch, make_operator, psnr
from dasinv.spaces import DiscreteArch, SpaceSpec, build_discrete, random_arch

OP = make_operator("blur")
CFG = CosineConfig()
TINY = TrainSchedule(epochs=3, steps_per_epoch=2, batch_size=16, warmup_epochs=1, eval_samples=64)
H1 = PRESETS["h1"]
NET = OperationKind.NET
ZERO = OperationKind.ZERO


def test_presets():
    assert PRESETS["h2"].alpha_lr == 1e-4 and PRESETS["h2"].alpha_wd == 1e-4
    assert H1 == HyperParams()
    assert {"h1", "h2", "bohb-blur", "bohb-das-single"} <= set(PRESETS)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        HyperParams(alpha_optimizer="sgd")
    with pytest.raises(ValueError):
        HyperParams(param_lr=0.0)
    with pytest.raises(ValueError):
        HyperParams(alpha_scheduler="cosine")


def test_lr_schedule_examples():
    assert lr_schedule(0.1, 0, 100, warmup=True, warmup_steps=10) == 0.0
    assert lr_schedule(0.1, 99, 100, scheduler="linear") == 0.0
    assert all(lr_schedule(0.1, s, 100) == 0.1 for s in range(100))
    assert lr_schedule(0.1, 5, 100, warmup=True, warmup_steps=10) == pytest.approx(0.05)
    assert lr_schedule(0.1, 5, 100, warmup=True, warmup_steps=10, warmup_mode="freeze") == 0.0
    assert lr_schedule(0.1, 10, 100, warmup=True, scheduler="linear", warmup_steps=10) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        lr_schedule(0.1, 100, 100)


@given(st.integers(1, 200), st.integers(1, 200))
def test_scaled_schedule_keeps_warmup_share(epochs, new):
    warm = epochs // 5
    s = TrainSchedule(epochs=epochs, warmup_epochs=warm).scaled_to(new)
    assert s.epochs == new
    assert abs(s.warmup_epochs - warm * new / epochs) <= 0.5


def test_single_op_space_search_is_plain_training():
    spec = SpaceSpec.sequential([NET], depth=3)
    res = das_search(spec, OP, H1, TINY, np.random.default_rng(0), CFG, keep_model=True)
    assert res.arch == DiscreteArch.uniform(spec, NET)
    np.testing.assert_array_equal(res.betas, 1.0)


def test_frozen_alpha_stays_near_uniform():
    spec = SpaceSpec.sequential(depth=3)
    hp = dataclasses.replace(H1, alpha_lr=0.0, alpha_wd=0.0)
    res = das_search(spec, OP, hp, TINY, np.random.default_rng(1), CFG)
    np.testing.assert_allclose(res.betas, 0.25, atol=1e-2)


def test_search_is_deterministic_and_alpha_moves_after_warmup():
    spec = SpaceSpec.sequential(depth=2)
    a = das_search(spec, OP, H1, TINY, np.random.default_rng(2), CFG, keep_model=True)
    b = das_search(spec, OP, H1, TINY, np.random.default_rng(2), CFG)
    assert a.one_shot_psnr == b.one_shot_psnr and a.arch == b.arch
    assert not a.failed and np.isfinite(a.one_shot_psnr)
    assert all(s.alpha.step > 0 for s in a.model.sites)


def test_unrolled_variant_runs():
    res = das_search(SpaceSpec.sequential(depth=2), OP, H1, TINY, np.random.default_rng(3), CFG, unroll_steps=1)
    assert not res.failed
    with pytest.raises(ValueError):
        das_search(SpaceSpec.sequential(depth=2), OP, H1, TINY, unroll_steps=2)


def test_divergence_is_reported_not_raised():
    hp = dataclasses.replace(H1, param_lr=1e6)
    res = das_search(SpaceSpec.sequential(depth=2), OP, hp, TINY, np.random.default_rng(4), CFG)
    assert res.failed and res.diagnostic


def test_retrain_deterministic():
    arch = random_arch(SpaceSpec.sequential(depth=3), np.random.default_rng(5))
    a = train_architecture(arch, OP, H1, TINY, np.random.default_rng(6), CFG)
    b = train_architecture(arch, OP, H1, TINY, np.random.default_rng(6), CFG)
    assert a.arch_psnr == b.arch_psnr


def test_zero_body_scores_u0():
    rng = np.random.default_rng(7)
    spec = SpaceSpec.cell("all")
    net = build_discrete(DiscreteArch.uniform(spec, ZERO), rng, OP)
    for w, b in net.cell_convs:
        w.data[:] = 0.0
        b.data[:] = 0.0
    value = evaluate_psnr(lambda y, s: net.forward(y, OP, s), OP, CFG, 256, eval_seed=3)
    batch = make_batch(np.random.default_rng(3), OP, CFG, 256)
    assert value == psnr(OP.adjoint(batch.measured), batch.clean)


def test_das_single_frozen_weights():
    spec = SpaceSpec.sequential(depth=3)
    res = das_single_search(spec, OP, PRESETS["bohb-das-single"], TINY, np.random.default_rng(8), CFG,
                            keep_model=True)
    assert not res.failed
    assert res.max_frozen_grad == 0.0
    for j, site in enumerate(res.model.sites):
        for t, kind in enumerate(spec.opset):
            if kind.benign:
                for name, p in site.candidates[t].params.items():
                    np.testing.assert_array_equal(p.data, res.pretrained[kind].net.ops[j].params[name].data)


def test_das_single_net_only_matches_pretrained():
    spec = SpaceSpec.sequential([NET], depth=3)
    res = das_single_search(spec, OP, H1, TINY, np.random.default_rng(9), CFG)
    assert res.one_shot_psnr == pytest.approx(res.pretrained[NET].arch_psnr, abs=1e-12)


def test_das_single_rejects_cell_space():
    with pytest.raises(ValueError):
        das_single_search(SpaceSpec.cell(), OP, H1, TINY)


def test_adam_weights_option():
    hp = dataclasses.replace(H1, param_optimizer="adam")
    res = train_architecture(DiscreteArch.uniform(SpaceSpec.sequential(depth=2), NET), OP, hp, TINY,
                             np.random.default_rng(10), CFG)
    assert not res.failed
