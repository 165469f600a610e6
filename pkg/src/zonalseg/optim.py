"""Optimizers, step schedules and the per-architecture training defaults."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .nn import Parameter


class MissingGradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd_momentum"
    lr: float = 0.01
    momentum: float = 0.0
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 1
    epochs: int = 1
    schedule: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"schedule epochs must be strictly increasing: {epochs}")
        object.__setattr__(self, "schedule", tuple((int(e), float(m)) for e, m in self.schedule))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = [list(s) for s in self.schedule]
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        d = dict(d)
        d["schedule"] = tuple(tuple(s) for s in d.get("schedule", ()))
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        return cls(**d)

    def with_overrides(self, **kwargs) -> "OptimizerConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def every_n_epochs(n: int, multiplier: float, epochs: int) -> tuple[tuple[int, float], ...]:
    return tuple((e, multiplier) for e in range(n, epochs, n))


def apply_lr_schedule(config: OptimizerConfig, epoch: int) -> float:
    """Learning rate in effect during ``epoch`` (0-based), multipliers cumulative."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    lr = config.lr
    for start, multiplier in config.schedule:
        if epoch >= start:
            lr *= multiplier
    return lr


SGD_SEGNET = OptimizerConfig(
    kind="sgd_momentum", lr=0.01, momentum=0.9, weight_decay=5e-4, batch_size=8, epochs=50,
    schedule=((20, 0.2), (40, 0.2)),
)
SGD_UNET = replace(SGD_SEGNET, batch_size=4)
ADAM_GENERATOR = OptimizerConfig(
    kind="adam", lr=0.01, betas=(0.9, 0.999), batch_size=12, epochs=50, schedule=every_n_epochs(20, 0.1, 50)
)
ADAM_DISCRIMINATOR = OptimizerConfig(kind="adam", lr=2e-4, betas=(0.9, 0.999), batch_size=12, epochs=50)


def default_optimizers(architecture: str) -> dict[str, OptimizerConfig]:
    """Training settings per architecture; pix2pix has a second entry for its critic."""
    if architecture == "segnet":
        return {"model": SGD_SEGNET}
    if architecture == "unet":
        return {"model": SGD_UNET}
    if architecture == "pix2pix":
        return {"model": ADAM_GENERATOR, "discriminator": ADAM_DISCRIMINATOR}
    raise ValueError(f"unknown architecture {architecture!r}")


def _grad_of(p: Parameter) -> np.ndarray:
    if p.grad is None:
        raise MissingGradientError(f"parameter {p.name!r} has no gradient; call backward() first")
    return p.grad


def sgd_momentum_step(params: Iterable[Parameter], config: OptimizerConfig, lr: float | None = None) -> None:
    """``v = momentum*v + (g + wd*w); w = w - lr*v``, then clear the gradients."""
    lr = config.lr if lr is None else lr
    params = list(params)
    grads = [_grad_of(p) for p in params]
    for p, g in zip(params, grads):
        w = p.value.data
        step = g + config.weight_decay * w if config.weight_decay else g
        p.velocity *= config.momentum
        p.velocity += step
        w -= lr * p.velocity
        p.grad = None


def adam_step(
    params: Iterable[Parameter], config: OptimizerConfig, iteration: int, lr: float | None = None
) -> None:
    """Bias-corrected Adam update for step number ``iteration`` (1-based)."""
    if iteration < 1:
        raise ValueError(f"Adam iteration is 1-based, got {iteration}")
    lr = config.lr if lr is None else lr
    b1, b2 = config.betas
    c1 = 1 - b1**iteration
    c2 = 1 - b2**iteration
    params = list(params)
    grads = [_grad_of(p) for p in params]
    for p, g in zip(params, grads):
        w = p.value.data
        if config.weight_decay:
            g = g + config.weight_decay * w
        p.moment1 *= b1
        p.moment1 += (1 - b1) * g
        p.moment2 *= b2
        p.moment2 += (1 - b2) * g * g
        m_hat = p.moment1 / c1
        v_hat = p.moment2 / c2
        w -= (lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(w.dtype)
        p.grad = None


class Optimizer:
    """Binds a parameter set to a config and tracks the step count."""

    def __init__(self, params: dict[str, Parameter] | Sequence[Parameter], config: OptimizerConfig) -> None:
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.config = config
        self.iteration = 0

    def lr(self, epoch: int) -> float:
        return apply_lr_schedule(self.config, epoch)

    def step(self, epoch: int) -> None:
        self.iteration += 1
        lr = self.lr(epoch)
        if self.config.kind == "sgd_momentum":
            sgd_momentum_step(self.params, self.config, lr)
        else:
            adam_step(self.params, self.config, self.iteration, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)
