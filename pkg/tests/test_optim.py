import math

import numpy as np
import pytest

from zonalseg.nn import Parameter
from zonalseg.optim import (
    ADAM_DISCRIMINATOR,
    ADAM_GENERATOR,
    SGD_SEGNET,
    SGD_UNET,
    MissingGradientError,
    Optimizer,
    OptimizerConfig,
    adam_step,
    apply_lr_schedule,
    default_optimizers,
    sgd_momentum_step,
)


def _param(w=1.0, g=None):
    p = Parameter(np.array([w], dtype=np.float64), "w")
    if g is not None:
        p.grad = np.array([g], dtype=np.float64)
    return p


def test_published_defaults():
    assert (SGD_SEGNET.kind, SGD_SEGNET.lr, SGD_SEGNET.momentum, SGD_SEGNET.weight_decay) == ("sgd_momentum", 0.01, 0.9, 5e-4)
    assert (SGD_SEGNET.batch_size, SGD_SEGNET.epochs, SGD_SEGNET.schedule) == (8, 50, ((20, 0.2), (40, 0.2)))
    assert (SGD_UNET.lr, SGD_UNET.momentum, SGD_UNET.weight_decay, SGD_UNET.batch_size) == (0.01, 0.9, 5e-4, 4)
    assert SGD_UNET.schedule == SGD_SEGNET.schedule and SGD_UNET.epochs == 50
    assert (ADAM_GENERATOR.kind, ADAM_GENERATOR.lr, ADAM_GENERATOR.batch_size, ADAM_GENERATOR.epochs) == ("adam", 0.01, 12, 50)
    assert ADAM_GENERATOR.schedule == ((20, 0.1), (40, 0.1))
    assert (ADAM_DISCRIMINATOR.lr, ADAM_DISCRIMINATOR.batch_size, ADAM_DISCRIMINATOR.schedule) == (2e-4, 12, ())
    assert set(default_optimizers("pix2pix")) == {"model", "discriminator"}


def test_schedules():
    for cfg in (SGD_SEGNET, SGD_UNET):
        assert apply_lr_schedule(cfg, 19) == 0.01
        assert math.isclose(apply_lr_schedule(cfg, 20), 0.002, rel_tol=1e-12)
        assert math.isclose(apply_lr_schedule(cfg, 40), 0.0004, rel_tol=1e-12)
    assert math.isclose(apply_lr_schedule(ADAM_GENERATOR, 20), 0.001, rel_tol=1e-12)
    assert math.isclose(apply_lr_schedule(ADAM_GENERATOR, 40), 0.0001, rel_tol=1e-12)
    assert apply_lr_schedule(ADAM_DISCRIMINATOR, 49) == 2e-4
    with pytest.raises(ValueError):
        apply_lr_schedule(SGD_SEGNET, -1)


def test_sgd_one_and_two_steps():
    cfg = OptimizerConfig(kind="sgd_momentum", lr=0.01, momentum=0.9, weight_decay=0.0)
    p = _param(1.0, 1.0)
    sgd_momentum_step([p], cfg)
    assert np.isclose(p.velocity[0], 1.0) and np.isclose(p.data[0], 0.99)
    p.grad = np.array([1.0])
    sgd_momentum_step([p], cfg)
    assert np.isclose(p.velocity[0], 1.9) and np.isclose(p.data[0], 0.971)


def test_sgd_zero_gradient_only_decays():
    cfg = OptimizerConfig(kind="sgd_momentum", lr=0.01, momentum=0.9, weight_decay=5e-4)
    p = _param(2.0, 0.0)
    sgd_momentum_step([p], cfg)
    assert np.isclose(p.data[0], 2.0 - 0.01 * 5e-4 * 2.0)


def test_adam_first_step_moves_by_lr():
    cfg = OptimizerConfig(kind="adam", lr=0.01)
    for g in (3.0, -0.2, 1e-3):
        p = _param(1.0, g)
        adam_step([p], cfg, 1)
        assert abs(abs(p.data[0] - 1.0) - 0.01) < 1e-6


def test_adam_zero_gradient_leaves_params():
    cfg = OptimizerConfig(kind="adam", lr=0.01)
    p = _param(1.0)
    for t in range(1, 4):
        p.grad = np.zeros(1)
        adam_step([p], cfg, t)
    assert p.data[0] == 1.0


def test_adam_matches_hand_recurrence():
    cfg = OptimizerConfig(kind="adam", lr=0.01, betas=(0.9, 0.999), eps=1e-8)
    p = _param(1.0)
    w, m, v, g = 1.0, 0.0, 0.0, 0.5
    for t in range(1, 4):
        p.grad = np.array([g])
        adam_step([p], cfg, t)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert abs(p.data[0] - w) < 1e-10


def test_missing_gradient_is_an_error():
    with pytest.raises(MissingGradientError):
        sgd_momentum_step([_param(1.0)], SGD_SEGNET)
    opt = Optimizer([_param(1.0)], ADAM_DISCRIMINATOR)
    with pytest.raises(MissingGradientError):
        opt.step(0)


def test_optimizer_applies_schedule_and_counts_steps():
    p = _param(1.0)
    opt = Optimizer({"w": p}, OptimizerConfig(kind="sgd_momentum", lr=1.0, momentum=0.0, schedule=((1, 0.5),)))
    for epoch, expected in ((0, 0.0), (1, -0.5)):
        opt.zero_grad()
        p.grad = p.grad + 1.0
        opt.step(epoch)
        assert np.isclose(p.data[0], expected)
    assert opt.iteration == 2 and p.grad is None


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        OptimizerConfig(kind="rmsprop")
    with pytest.raises(ValueError):
        OptimizerConfig(lr=0.0)
    assert OptimizerConfig.from_dict(ADAM_GENERATOR.to_dict()) == ADAM_GENERATOR
    assert SGD_UNET.with_overrides(lr=0.1, momentum=None).lr == 0.1
