"""
Tests for the loss composition, the optimizer and the alternating training step.
"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sdtm import losses
from sdtm.data import sample_batch
from sdtm.errors import EmptyBatchError, LabelError, NumericError, RangeError, ShapeError
from sdtm.gan import (
    LossParts,
    active_lambdas,
    build_state,
    classification_losses,
    generate,
    total_losses,
    train_step,
    weighted_total,
)
from sdtm.optim import Adam, AdamMoments, adam_step, lr_schedule
from sdtm.tensor import Tensor


def scalar(value):
    return Tensor(np.float32(value))


def batch_for(index, config, seed=0, split="seen"):
    return sample_batch(index, split, config.k, config.batch_size, np.random.default_rng(seed))


def snapshot(params):
    return [None if p.grad is None else p.grad.copy() for p in params]


# Losses
@pytest.mark.parametrize(
    "real, fake, loss_d, loss_g",
    [
        ([1.0], [-1.0], 0.0, 1.0),
        ([0.0], [0.0], 2.0, 0.0),
        ([0.5, 2.0], [-0.25, 0.5], 1.375, -0.125),
        ([0.2], [0.3], 2.1, -0.3),
    ],
)
def test_hinge_table(real, fake, loss_d, loss_g):
    d, g = losses.hinge_losses(Tensor(real), Tensor(fake))
    assert_allclose(d.item(), loss_d, atol=1e-6)
    assert_allclose(g.item(), loss_g, atol=1e-6)


def test_hinge_sets_may_differ_in_length():
    d, _ = losses.hinge_losses(Tensor([0.0, 0.0, 0.0]), Tensor([-1.0]))
    assert_allclose(d.item(), 1.0)


def test_hinge_rejects_bad_scores():
    with pytest.raises(EmptyBatchError):
        losses.real(Tensor(np.zeros(0)))
    with pytest.raises(ShapeError):
        losses.fake(Tensor(np.zeros((2, 1))))


def test_classification_uniform_logits(make_config):
    state = build_state(make_config(), n_classes=10)
    state.disc.cls_head.weight.data[:] = 0.0
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, size=(3, 3, 16, 16)))
    assert_allclose(classification_losses(state.disc, x, [0, 4, 9]).item(), math.log(10), atol=1e-5)


def test_classification_rejects_unseen_label(make_config):
    state = build_state(make_config(), n_classes=3)
    with pytest.raises(LabelError):
        classification_losses(state.disc, Tensor(np.zeros((1, 3, 16, 16))), [3])


def test_weighted_total_sums_terms():
    parts = LossParts(adv=scalar(1), cls=scalar(2), fre=scalar(3), structural=scalar(4))
    assert weighted_total(parts, 1.0, 1.0).item() == 10.0
    assert weighted_total(parts, 0.0, 1.0).item() == 6.0
    assert weighted_total(LossParts(adv=scalar(1), cls=scalar(2)), 1.0, 1.0).item() == 3.0


def test_weighted_total_is_linear_in_lambda():
    parts = LossParts(adv=scalar(0.5), cls=scalar(0.25), structural=scalar(2.0))
    base = weighted_total(parts, 0.0, 0.0).item()
    for lam in (0.1, 1.0, 10.0):
        assert_allclose(weighted_total(parts, lam, 0.0).item() - base, 2.0 * lam, rtol=1e-6)


def test_disabled_term_is_omitted_not_multiplied():
    parts = LossParts(adv=scalar(1), cls=scalar(2), fre=Tensor(np.float32(np.nan)))
    assert weighted_total(parts, 1.0, 0.0).item() == 3.0


def test_total_losses_respects_switches(make_config):
    state = build_state(make_config(structd=False, lambda_fre=0.5), n_classes=3)
    d_parts = LossParts(adv=scalar(1), cls=scalar(2), fre=scalar(3), structural=scalar(4))
    loss_d, loss_g = total_losses(state, d_parts, d_parts)
    assert loss_d.item() == loss_g.item() == 4.5
    assert active_lambdas(state.config) == (0.0, 0.5)


# Schedule and optimizer
@pytest.mark.parametrize(
    "iteration, expected",
    [(0, 1e-4), (49, 1e-4), (50, 1e-4), (75, 5e-5), (100, 0.0)],
)
def test_lr_schedule(iteration, expected):
    assert lr_schedule(iteration, 100, 1e-4) == pytest.approx(expected)


def test_lr_schedule_out_of_range():
    with pytest.raises(RangeError):
        lr_schedule(101, 100, 1e-4)
    with pytest.raises(RangeError):
        lr_schedule(0, 0, 1e-4)


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.ones(3), requires_grad=True)
    adam_step([p], [np.zeros(3, dtype=np.float32)], AdamMoments.zeros_like([p]), lr=0.1)
    assert_array_equal(p.data, np.ones(3))


def test_adam_leaves_parameters_without_grad_alone():
    """A parameter with no gradient this step keeps its value and moments despite earlier momentum."""
    moving, idle = Tensor(np.zeros(2), requires_grad=True), Tensor(np.zeros(2), requires_grad=True)
    moments = AdamMoments.zeros_like([moving, idle])
    grad = np.array([1.0, -1.0], dtype=np.float32)
    adam_step([moving, idle], [grad, grad], moments, lr=1e-3)
    before, m_before, v_before = idle.data.copy(), moments.m[1].copy(), moments.v[1].copy()
    adam_step([moving, idle], [grad, None], moments, lr=1e-3)
    assert_array_equal(idle.data, before)
    assert_array_equal(moments.m[1], m_before)
    assert_array_equal(moments.v[1], v_before)
    assert_allclose(moving.data, [-2e-3, 2e-3], rtol=1e-3)


def test_adam_first_step_moves_by_lr():
    p = Tensor(np.zeros(2), requires_grad=True)
    moments = AdamMoments.zeros_like([p])
    adam_step([p], [np.array([0.5, -2.0], dtype=np.float32)], moments, lr=1e-3)
    assert_allclose(p.data, [-1e-3, 1e-3], rtol=1e-4)
    assert moments.step == 1


def test_adam_skips_non_finite_step():
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([1.0, np.inf], dtype=np.float32)
    opt = Adam([p])
    assert opt.step(1e-3, "generator") is False
    assert opt.skipped == 1
    assert opt.moments.step == 0
    assert_array_equal(p.data, np.ones(2))
    with pytest.raises(NumericError):
        adam_step([p], [p.grad], opt.moments, 1e-3)


# Training step
def test_state_construction(make_config):
    state = build_state(make_config(structd=False), n_classes=3)
    assert state.structd is None and state.fred is not None
    names = [name for name, _ in state.named_parameters()]
    assert all(name.split(".")[0] in ("gen", "disc", "fred") for name in names)
    assert len(names) == len(set(names))


def test_train_step_report(make_config, synthetic_index):
    config = make_config()
    state = build_state(config, n_classes=synthetic_index.n_seen)
    report = train_step(state, batch_for(synthetic_index, config))
    assert state.iteration == report.iteration == 1
    assert 0 <= report.mod_index < config.k
    assert report.structd_d is not None and report.fred_d is not None
    assert_allclose(report.loss_d, report.adv_d + report.cls_d + report.fred_d + report.structd_d, rtol=1e-5)
    assert_allclose(report.loss_g, report.adv_g + report.cls_g + report.fred_g + report.structd_g, rtol=1e-5)
    assert not report.skipped_d and not report.skipped_g
    assert report.grad_norm_d > 0 and report.grad_norm_g > 0


def test_train_step_is_deterministic(make_config, synthetic_index):
    config = make_config()
    reports, states = [], []
    for _ in range(2):
        state = build_state(config, n_classes=synthetic_index.n_seen)
        reports.append([train_step(state, batch_for(synthetic_index, config, seed=i)) for i in range(2)])
        states.append(state)
    assert reports[0] == reports[1]
    for (_, a), (_, b) in zip(states[0].named_parameters(), states[1].named_parameters()):
        assert_array_equal(a.data, b.data)


def test_discriminator_and_generator_updates_are_isolated(make_config, synthetic_index):
    config = make_config()
    state = build_state(config, n_classes=synthetic_index.n_seen)
    g_params, d_params = state.opt_g.params, state.opt_d.params
    g_before = [p.data.copy() for p in g_params]
    seen = {}
    d_step, g_step = state.opt_d.step, state.opt_g.step

    def after_d_backward(lr, group=""):
        seen["gen_grads_in_d_step"] = snapshot(g_params)
        seen["d_grads"] = snapshot(d_params)
        stepped = d_step(lr, group)
        seen["g_after_d_step"] = [p.data.copy() for p in g_params]
        return stepped

    def after_g_backward(lr, group=""):
        seen["d_grads_in_g_step"] = snapshot(d_params)
        d_before = [p.data.copy() for p in d_params]
        stepped = g_step(lr, group)
        seen["d_unchanged_by_g_step"] = all(np.array_equal(a, p.data) for a, p in zip(d_before, d_params))
        return stepped

    state.opt_d.step = after_d_backward
    state.opt_g.step = after_g_backward
    train_step(state, batch_for(synthetic_index, config))

    assert all(g is None for g in seen["gen_grads_in_d_step"])
    for before, after in zip(g_before, seen["g_after_d_step"]):
        assert_array_equal(before, after)
    for before, after in zip(seen["d_grads"], seen["d_grads_in_g_step"]):
        assert_array_equal(before, after)
    assert seen["d_unchanged_by_g_step"]
    assert all(p.requires_grad for p in d_params)


def test_every_parameter_receives_gradient(make_config, synthetic_index):
    config = make_config()
    state = build_state(config, n_classes=synthetic_index.n_seen)
    touched = {name: False for name, _ in state.named_parameters()}
    for i in range(10):
        train_step(state, batch_for(synthetic_index, config, seed=i))
        for name, p in state.named_parameters():
            touched[name] |= p.grad is not None and bool(np.any(p.grad != 0))
    assert [name for name, hit in touched.items() if not hit] == []


def test_structd_switch_removes_its_terms(make_config, synthetic_index):
    config = make_config(structd=False)
    state = build_state(config, n_classes=synthetic_index.n_seen)
    report = train_step(state, batch_for(synthetic_index, config))
    assert report.structd_d is None and report.structd_g is None
    assert_allclose(report.loss_d, report.adv_d + report.cls_d + report.fred_d, rtol=1e-5)


def test_plain_backbone_step(make_config, synthetic_index):
    config = make_config(texmod=False, structd=False, fred=False)
    state = build_state(config, n_classes=synthetic_index.n_seen)
    report = train_step(state, batch_for(synthetic_index, config))
    assert report.fred_d is None and report.structd_d is None
    assert_allclose(report.loss_d, report.adv_d + report.cls_d, rtol=1e-5)
    assert_allclose(report.loss_g, report.adv_g + report.cls_g, rtol=1e-5)


def test_one_shot_step(make_config, synthetic_index):
    config = make_config(k=1)
    state = build_state(config, n_classes=synthetic_index.n_seen)
    report = train_step(state, batch_for(synthetic_index, config))
    assert report.mod_index == 0


def test_step_past_schedule(make_config, synthetic_index):
    config = make_config(total_iters=1)
    state = build_state(config, n_classes=synthetic_index.n_seen)
    train_step(state, batch_for(synthetic_index, config))
    with pytest.raises(RangeError):
        train_step(state, batch_for(synthetic_index, config))


def test_step_rejects_unseen_category(make_config, synthetic_index):
    config = make_config()
    state = build_state(config, n_classes=synthetic_index.n_seen)
    with pytest.raises(LabelError):
        train_step(state, batch_for(synthetic_index, config, split="unseen"))


def test_generate_shape_and_range(make_config, synthetic_index):
    config = make_config()
    state = build_state(config, n_classes=synthetic_index.n_seen)
    episode = batch_for(synthetic_index, config)[0]
    images = [Tensor(x.data[None]) for x in episode.images]
    out = generate(state, images, np.random.default_rng(0))
    assert out.shape == (1, 3, 16, 16)
    assert np.all(np.abs(out.data) <= 1.0)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fifty_steps_stay_finite(make_config, synthetic_index, seed):
    config = make_config(seed=seed, total_iters=50)
    state = build_state(config, n_classes=synthetic_index.n_seen)
    for i in range(50):
        report = train_step(state, batch_for(synthetic_index, config, seed=seed * 100 + i))
        assert math.isfinite(report.loss_d) and math.isfinite(report.loss_g)
    assert state.skipped_steps == 0
