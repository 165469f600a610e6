"""Mini-batch training and inference for the segmentation networks."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .data import SliceSample, make_rng
from .losses import DEFAULT_LAMBDA_SEG, dsc_loss, pix2pix_losses
from .optim import Optimizer, OptimizerConfig
from .postprocess import ZonalMask, postprocess
from .preprocess import PreprocConfig, apply_wg_mask, augment, eval_view
from .tensor import NumericError, Tensor, no_grad

log = logging.getLogger(__name__)

_SHUFFLE_KEY = 0x5EED


@dataclass(frozen=True)
class TrainItem:
    """A slice at target size plus the integer key that seeds its augmentation stream."""

    key: tuple[int, ...]
    sample: SliceSample


def make_batch(samples: Sequence[SliceSample], target: str = "cg", mask_input: bool = True):
    images = np.stack([apply_wg_mask(s.image, s.wg_mask) if mask_input else s.image for s in samples])
    masks = np.stack([getattr(s, f"{target}_mask") for s in samples])
    return images[:, None].astype(np.float32), masks[:, None].astype(np.float32)


class Trainer:
    """Owns a model, its optimizer(s) and the epoch counter.

    ``target`` selects the mask to learn (``cg`` for zonal training, ``wg``
    for pre-training); ``mask_input`` zeroes the image outside the WG first.
    Shuffling draws from a persistent PCG64 stream whose state is
    checkpointed; augmentation streams are derived from
    ``(seed, *item.key, epoch)`` so they do not depend on batch order.
    """

    def __init__(
        self,
        model,
        optimizers: dict[str, OptimizerConfig],
        preproc: PreprocConfig,
        seed: int,
        discriminator=None,
        target: str = "cg",
        mask_input: bool = True,
        lambda_seg: float = DEFAULT_LAMBDA_SEG,
        log_fn: Optional[Callable[[dict], None]] = None,
    ) -> None:
        self.model = model
        self.optimizer = Optimizer(model.parameters(), optimizers["model"])
        self.discriminator = discriminator
        self.disc_optimizer = None
        if discriminator is not None:
            self.disc_optimizer = Optimizer(discriminator.parameters(), optimizers["discriminator"])
        self.preproc = preproc
        self.seed = seed
        self.target = target
        self.mask_input = mask_input
        self.lambda_seg = lambda_seg
        self.log_fn = log_fn
        self.epoch = 0
        self.rng = make_rng(seed, _SHUFFLE_KEY)
        self.history: list[dict] = []

    @property
    def batch_size(self) -> int:
        return self.optimizer.config.batch_size

    def _augmented(self, items: Sequence[TrainItem]) -> list[SliceSample]:
        return [augment(it.sample, self.preproc, make_rng(self.seed, *it.key, self.epoch)) for it in items]

    def train_step(self, x: np.ndarray, y: np.ndarray) -> float:
        self.model.train()
        if self.discriminator is None:
            loss = dsc_loss(self.model(Tensor(x)), y)
            self.model.zero_grad()
            loss.backward()
            self.optimizer.step(self.epoch)
            value = loss.value
        else:
            self.discriminator.train()
            gen_loss, disc_loss = pix2pix_losses(self.model, self.discriminator, Tensor(x), y, self.lambda_seg)
            self.model.zero_grad()
            self.discriminator.zero_grad()
            gen_loss.backward()
            self.discriminator.zero_grad()
            disc_loss.backward()
            self.disc_optimizer.step(self.epoch)
            self.optimizer.step(self.epoch)
            value = gen_loss.components["dsc"]
        if not np.isfinite(value):
            raise NumericError(f"training loss became {value} at epoch {self.epoch}")
        return value

    def train_epoch(self, items: Sequence[TrainItem]) -> float:
        start = time.perf_counter()
        order = self.rng.permutation(len(items))
        losses = []
        for i in range(0, len(order), self.batch_size):
            batch_items = [items[j] for j in order[i : i + self.batch_size]]
            x, y = make_batch(self._augmented(batch_items), self.target, self.mask_input)
            losses.append(self.train_step(x, y))
        mean_loss = float(np.mean(losses)) if losses else 0.0
        record = {
            "epoch": self.epoch,
            "loss": mean_loss,
            "lr": self.optimizer.lr(self.epoch),
            "wall_time": round(time.perf_counter() - start, 3),
        }
        self.history.append(record)
        if self.log_fn is not None:
            self.log_fn(record)
        log.debug(json.dumps(record))
        self.epoch += 1
        return mean_loss

    def fit(self, items: Sequence[TrainItem], epochs: int) -> list[dict]:
        """Train until ``epochs`` epochs have completed in total (resumes mid-way)."""
        while self.epoch < epochs:
            self.train_epoch(items)
        return self.history

    # -- persistence ------------------------------------------------------------

    def checkpoint(self, extra: Optional[dict] = None) -> ckpt_io.Checkpoint:
        return ckpt_io.make_checkpoint(
            self.model, self.optimizer, discriminator=self.discriminator, disc_optimizer=self.disc_optimizer,
            epoch=self.epoch, rng=self.rng, extra={"target": self.target, **(extra or {})},
        )

    def save(self, path, extra: Optional[dict] = None) -> ckpt_io.Checkpoint:
        ckpt = self.checkpoint(extra)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(ckpt.to_bytes())
        return ckpt

    def resume(self, ckpt: ckpt_io.Checkpoint) -> None:
        """Restore weights, optimizer slots, epoch counter and shuffling stream."""
        ckpt_io.restore_model(ckpt, self.model, "model", self.optimizer)
        if self.discriminator is not None:
            ckpt_io.restore_model(ckpt, self.discriminator, "discriminator", self.disc_optimizer)
        self.epoch = ckpt.epoch
        if "rng_state" in ckpt.meta:
            self.rng.bit_generator.state = ckpt.meta["rng_state"]


def load_pretrained(ckpt: ckpt_io.Checkpoint, model, discriminator=None) -> None:
    """Fine-tuning start: weights only, fresh optimizer state."""
    ckpt_io.restore_model(ckpt, model, "model")
    if discriminator is not None and any(n.startswith("discriminator/") for n in ckpt.tensors):
        ckpt_io.restore_model(ckpt, discriminator, "discriminator")


def predict_logits(model, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode logits for a stack of (n, h, w) inputs."""
    model.eval()
    out = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            x = Tensor(np.ascontiguousarray(images[i : i + batch_size, None], dtype=np.float32))
            out.append(model(x).data[:, 0])
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:], dtype=np.float32)


@dataclass
class SlicePrediction:
    sample: SliceSample
    logits: np.ndarray
    zonal: ZonalMask


def segment_slices(model, samples: Sequence[SliceSample], preproc: PreprocConfig) -> list[SlicePrediction]:
    """Center-crop, WG-mask, predict and post-process each slice."""
    views = [eval_view(s, preproc) for s in samples]
    if not views:
        return []
    x, _ = make_batch(views)
    logits = predict_logits(model, x[:, 0])
    return [SlicePrediction(v, lg, postprocess(lg, v.wg_mask)) for v, lg in zip(views, logits)]
