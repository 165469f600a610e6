"""Soft Dice training loss and the conditional-GAN objectives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor, as_tensor

DICE_EPS = 1e-7
DEFAULT_LAMBDA_SEG = 10.0


@dataclass
class LossValue:
    loss: Tensor
    components: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.loss.data)

    def backward(self) -> None:
        self.loss.backward()


def soft_dice(prob: Tensor, target, eps: float = DICE_EPS) -> Tensor:
    """``-2 sum(s r) / (sum(s) + sum(r) + eps)`` over every element of the batch.

    ``prob`` holds values in [0, 1]; the result lies in [-1, 0] and is 0 when
    both inputs are empty.
    """
    target = as_tensor(target, prob.dtype)
    if prob.shape != target.shape:
        raise ShapeError(f"dice operands differ in shape: {prob.shape} vs {target.shape}")
    overlap = (prob * target).sum()
    denom = prob.sum() + target.sum() + eps
    return -(overlap * 2.0) / denom


def dsc_loss(logits: Tensor, target) -> LossValue:
    """Soft Dice on ``sigmoid(logits)``; ``target`` is a binary mask of the same shape."""
    target = as_tensor(target, logits.dtype)
    if logits.shape != target.shape:
        raise ShapeError(f"dsc_loss shape mismatch: logits {logits.shape} vs target {target.shape}")
    loss = soft_dice(F.sigmoid(logits), target)
    return LossValue(loss, {"dsc": float(loss.data)})


def pix2pix_losses(
    generator,
    discriminator,
    image: Tensor,
    target_mask,
    lambda_seg: float = DEFAULT_LAMBDA_SEG,
) -> tuple[LossValue, LossValue]:
    """Generator and discriminator objectives from one generator pass.

    The discriminator sees (image, target) as real and (image, sigmoid(G(image)))
    as fake; its loss uses a detached copy of the fake so its backward pass
    stops at the discriminator. The generator loss adds ``lambda_seg`` times
    the soft Dice loss to the adversarial term.
    """
    target_mask = as_tensor(target_mask, image.dtype)
    if image.shape != target_mask.shape:
        raise ShapeError(f"image {image.shape} and mask {target_mask.shape} differ in shape")
    logits = generator(image)
    fake = F.sigmoid(logits)

    real_score = discriminator.judge(image, target_mask)
    fake_score_d = discriminator.judge(image, fake.detach())
    d_real = F.bce_with_logits(real_score, 1.0)
    d_fake = F.bce_with_logits(fake_score_d, 0.0)
    disc_loss = d_real + d_fake

    fake_score_g = discriminator.judge(image, fake)
    g_adv = F.bce_with_logits(fake_score_g, 1.0)
    g_dsc = soft_dice(fake, target_mask)
    gen_loss = g_adv + g_dsc * lambda_seg

    gen = LossValue(gen_loss, {"adversarial": float(g_adv.data), "dsc": float(g_dsc.data)})
    disc = LossValue(disc_loss, {"real": float(d_real.data), "fake": float(d_fake.data)})
    return gen, disc
