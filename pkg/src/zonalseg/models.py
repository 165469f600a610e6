"""SegNet, U-Net and pix2pix built from the local layer set.

Every network takes single-channel slices and returns raw logits; the
sigmoid is applied only inside the losses and at binarization time.
Channel widths follow ``base_width * 2**level`` capped at ``8 * base_width``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import functional as F
from .nn import ConvBlock, Conv2d, ConvTranspose2d, BatchNorm2d, Module
from .tensor import ShapeError, Tensor, no_grad

ARCHITECTURES = ("segnet", "unet", "pix2pix")

DEFAULT_LEVELS = {"segnet": 5, "unet": 4, "pix2pix": 8, "discriminator": 5}


def channel_width(base_width: int, level: int) -> int:
    return base_width * 2 ** min(level, 3)


def _check_base_width(base_width: int) -> None:
    if base_width < 1:
        raise ValueError(f"base_width must be >= 1, got {base_width}")


class SegmentationModel(Module):
    """Common metadata for the networks."""

    architecture: str = ""
    input_channels: int = 1
    output_channels: int = 1

    def __init__(self, base_width: int, scaling_levels: int, seed: int) -> None:
        _check_base_width(base_width)
        if scaling_levels < 1:
            raise ValueError(f"scaling_levels must be >= 1, got {scaling_levels}")
        self.base_width = base_width
        self.scaling_levels = scaling_levels
        self.seed = seed
        self.bottleneck_shape: Optional[tuple] = None

    def config(self) -> dict:
        return {
            "architecture": self.architecture,
            "base_width": self.base_width,
            "scaling_levels": self.scaling_levels,
            "seed": self.seed,
        }

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.input_channels:
            raise ShapeError(
                f"{self.architecture} expects (n, {self.input_channels}, h, w) input, got {x.shape}"
            )
        factor = 2**self.scaling_levels
        h, w = x.shape[2:]
        if h % factor or w % factor:
            raise ShapeError(
                f"{self.architecture} with {self.scaling_levels} scaling levels needs spatial dims "
                f"divisible by {factor}, got {h}x{w}"
            )


class SegNet(SegmentationModel):
    """Encoder-decoder whose decoder unpools with the encoder's argmax indices."""

    architecture = "segnet"

    def __init__(self, base_width: int = 64, scaling_levels: int = 5, seed: int = 0) -> None:
        super().__init__(base_width, scaling_levels, seed)
        rng = np.random.default_rng(seed)
        ch = [channel_width(base_width, l) for l in range(scaling_levels)]
        self.encoder = []
        for l in range(scaling_levels):
            c_in = self.input_channels if l == 0 else ch[l - 1]
            self.encoder.append(_Pair(ConvBlock(c_in, ch[l], rng), ConvBlock(ch[l], ch[l], rng)))
        self.decoder = []
        for l in reversed(range(scaling_levels)):
            c_out = ch[l - 1] if l > 0 else ch[0]
            self.decoder.append(_Pair(ConvBlock(ch[l], ch[l], rng), ConvBlock(ch[l], c_out, rng)))
        # plain conv: soft-max and the final ReLU are dropped
        self.classifier = Conv2d(ch[0], self.output_channels, 3, 1, 1, bias=True, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        indices = []
        for block in self.encoder:
            x, idx = F.max_pool_2x2(block(x))
            indices.append(idx)
        self.bottleneck_shape = x.shape
        for block, idx in zip(self.decoder, reversed(indices)):
            x = block(F.max_unpool_2x2(x, idx))
        return self.classifier(x)


class UNet(SegmentationModel):
    """Contracting/expanding path with channel concatenation of mirrored levels."""

    architecture = "unet"

    def __init__(self, base_width: int = 64, scaling_levels: int = 4, seed: int = 0) -> None:
        super().__init__(base_width, scaling_levels, seed)
        rng = np.random.default_rng(seed)
        ch = [channel_width(base_width, l) for l in range(scaling_levels + 1)]
        self.encoder = [_Pair(ConvBlock(self.input_channels, ch[0], rng), ConvBlock(ch[0], ch[0], rng))]
        for l in range(1, scaling_levels + 1):
            self.encoder.append(_Pair(ConvBlock(ch[l - 1], ch[l], rng), ConvBlock(ch[l], ch[l], rng)))
        self.upsample = []
        self.decoder = []
        for l in reversed(range(1, scaling_levels + 1)):
            self.upsample.append(ConvTranspose2d(ch[l], ch[l - 1], 2, 2, 0, bias=True, rng=rng))
            self.decoder.append(_Pair(ConvBlock(2 * ch[l - 1], ch[l - 1], rng), ConvBlock(ch[l - 1], ch[l - 1], rng)))
        self.classifier = Conv2d(ch[0], self.output_channels, 3, 1, 1, bias=True, rng=rng)
        self.skip_channels: list[int] = []

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        skips = []
        x = self.encoder[0](x)
        for block in self.encoder[1:]:
            skips.append(x)
            x, _ = F.max_pool_2x2(x)
            x = block(x)
        self.bottleneck_shape = x.shape
        self.skip_channels = []
        for up, block, skip in zip(self.upsample, self.decoder, reversed(skips)):
            x = F.concat_channels(up(x), skip)
            self.skip_channels.append(x.shape[1])
            x = block(x)
        return self.classifier(x)


class Pix2PixGenerator(SegmentationModel):
    """U-Net style generator that halves the resolution down to 1x1 at 256x256.

    The first and innermost levels carry no batch norm (a 1x1 map has no
    spatial statistics to normalize with).
    """

    architecture = "pix2pix"

    def __init__(self, base_width: int = 64, scaling_levels: int = 8, seed: int = 0) -> None:
        super().__init__(base_width, scaling_levels, seed)
        rng = np.random.default_rng(seed)
        L = scaling_levels
        ch = [channel_width(base_width, l) for l in range(L + 1)]
        self.encoder = [ConvBlock(self.input_channels, ch[0], rng, norm=False, act="leaky_relu")]
        for l in range(1, L + 1):
            inner = l == L
            self.encoder.append(
                ConvBlock(ch[l - 1], ch[l], rng, norm=not inner, act="relu" if inner else "leaky_relu")
            )
        self.upsample = []
        self.up_norm = []
        self.decoder = []
        for l in reversed(range(1, L + 1)):
            self.upsample.append(ConvTranspose2d(ch[l], ch[l - 1], 2, 2, 0, bias=False, rng=rng))
            self.up_norm.append(BatchNorm2d(ch[l - 1]))
            self.decoder.append(ConvBlock(2 * ch[l - 1], ch[l - 1], rng))
        self.classifier = Conv2d(ch[0], self.output_channels, 3, 1, 1, bias=True, rng=rng)

    def _check_input(self, x: Tensor) -> None:
        super()._check_input(x)
        side = 2**self.scaling_levels
        if x.shape[2:] != (side, side):
            raise ShapeError(
                f"pix2pix generator with {self.scaling_levels} scaling levels needs "
                f"{side}x{side} input, got {x.shape[2]}x{x.shape[3]}"
            )

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        skips = []
        x = self.encoder[0](x)
        for block in self.encoder[1:]:
            skips.append(x)
            x, _ = F.max_pool_2x2(x)
            x = block(x)
        self.bottleneck_shape = x.shape
        for up, norm, block, skip in zip(self.upsample, self.up_norm, self.decoder, reversed(skips)):
            x = F.relu(norm(up(x)))
            x = block(F.concat_channels(x, skip))
        return self.classifier(x)


class PatchDiscriminator(SegmentationModel):
    """Conditional patch critic over the (image, mask) channel pair."""

    architecture = "discriminator"
    input_channels = 2

    def __init__(self, base_width: int = 64, scaling_levels: int = 5, seed: int = 0) -> None:
        super().__init__(base_width, scaling_levels, seed)
        rng = np.random.default_rng(seed + 1)
        ch = [channel_width(base_width, l) for l in range(scaling_levels)]
        self.blocks = []
        for l in range(scaling_levels):
            c_in = self.input_channels if l == 0 else ch[l - 1]
            self.blocks.append(
                ConvBlock(c_in, ch[l], rng, kernel_size=4, stride=2, padding=1, norm=l > 0, act="leaky_relu")
            )
        self.head = Conv2d(ch[-1], 1, 3, 1, 1, bias=True, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        self._check_input(x)
        for block in self.blocks:
            x = block(x)
        return self.head(x)

    def judge(self, image: Tensor, mask: Tensor) -> Tensor:
        return self.forward(F.concat_channels(image, mask))


class _Pair(Module):
    def __init__(self, first: Module, second: Module) -> None:
        self.first = first
        self.second = second

    def forward(self, x: Tensor) -> Tensor:
        return self.second(self.first(x))


def build_segnet(base_width: int = 64, scaling_levels: int = 5, seed: int = 0) -> SegNet:
    return SegNet(base_width, scaling_levels, seed)


def build_unet(base_width: int = 64, scaling_levels: int = 4, seed: int = 0) -> UNet:
    return UNet(base_width, scaling_levels, seed)


def build_pix2pix(
    base_width: int = 64, generator_levels: int = 8, discriminator_levels: int = 5, seed: int = 0
) -> tuple[Pix2PixGenerator, PatchDiscriminator]:
    return (
        Pix2PixGenerator(base_width, generator_levels, seed),
        PatchDiscriminator(base_width, discriminator_levels, seed),
    )


def build_model(architecture: str, base_width: int, scaling_levels: Optional[int] = None, seed: int = 0):
    """Build by name. pix2pix returns the generator only; see :func:`build_pix2pix`."""
    if architecture not in ARCHITECTURES and architecture != "discriminator":
        raise ValueError(f"unknown architecture {architecture!r}")
    levels = scaling_levels if scaling_levels is not None else DEFAULT_LEVELS[architecture]
    cls = {"segnet": SegNet, "unet": UNet, "pix2pix": Pix2PixGenerator, "discriminator": PatchDiscriminator}[
        architecture
    ]
    return cls(base_width, levels, seed)


def forward(model: SegmentationModel, batch: Tensor, mode: str = "eval") -> Tensor:
    """Run ``model`` in ``train`` mode (graph recorded) or ``eval`` mode (no graph)."""
    if mode == "train":
        model.train()
        return model(batch)
    if mode == "eval":
        model.eval()
        with no_grad():
            return model(batch)
    raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
