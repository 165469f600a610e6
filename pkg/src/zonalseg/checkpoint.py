"""Binary checkpoints of named tensors.

Layout (little endian)::

    b"ZSEG"  u32 version
    u32 n    n bytes of UTF-8 JSON metadata (sorted keys)
    u32 count
    count x { u32 n, name bytes, u32 ndim, ndim x u32 dims, float32 data }

Metadata carries the architecture tag, base width, scaling levels, epoch,
optimizer configs and step counts, and the shuffling RNG state. Tensor names
are ``<role>/param/<path>``, ``<role>/buffer/<path>`` and
``<role>/opt/<path>/<slot>`` where ``role`` is ``model`` or ``discriminator``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"ZSEG"
VERSION = 1
OPT_SLOTS = ("velocity", "moment1", "moment2")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    """Tensor names or shapes do not match the target model."""


class ArchitectureMismatchError(CheckpointMismatchError):
    pass


@dataclass
class Checkpoint:
    architecture: str
    base_width: int
    scaling_levels: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))

    def to_bytes(self) -> bytes:
        header = dict(self.meta)
        header.update(architecture=self.architecture, base_width=self.base_width,
                      scaling_levels=self.scaling_levels)
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", self.version))
        out.write(struct.pack("<I", len(blob)))
        out.write(blob)
        out.write(struct.pack("<I", len(self.tensors)))
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            out.write(struct.pack("<I", len(encoded)))
            out.write(encoded)
            out.write(struct.pack("<I", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.write(arr.tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        reader = _Reader(data)
        if reader.take(4) != MAGIC:
            raise CheckpointError("not a checkpoint (bad magic bytes)")
        version = reader.u32()
        if version != VERSION:
            raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
        tensors = {}
        for _ in range(reader.u32()):
            name = reader.take(reader.u32()).decode("utf-8")
            ndim = reader.u32()
            shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        if reader.remaining:
            raise CheckpointError(f"{reader.remaining} trailing bytes after tensor table")
        arch = header.pop("architecture")
        width = header.pop("base_width")
        levels = header.pop("scaling_levels")
        return cls(arch, width, levels, tensors, header, version)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def model_tensors(model, role: str = "model", optimizer=None) -> dict[str, np.ndarray]:
    tensors = {}
    for name, p in model.parameters().items():
        tensors[f"{role}/param/{name}"] = p.data
        if optimizer is not None:
            for slot in OPT_SLOTS:
                tensors[f"{role}/opt/{name}/{slot}"] = getattr(p, slot)
    for name, buf in model.buffers().items():
        tensors[f"{role}/buffer/{name}"] = buf
    return tensors


def make_checkpoint(
    model,
    optimizer=None,
    discriminator=None,
    disc_optimizer=None,
    epoch: int = 0,
    rng: Optional[np.random.Generator] = None,
    extra: Optional[dict] = None,
) -> Checkpoint:
    tensors = model_tensors(model, "model", optimizer)
    meta: dict = {"epoch": int(epoch), "seed": int(getattr(model, "seed", 0))}
    if optimizer is not None:
        meta["optimizer"] = {"config": optimizer.config.to_dict(), "iteration": optimizer.iteration}
    if discriminator is not None:
        tensors.update(model_tensors(discriminator, "discriminator", disc_optimizer))
        meta["discriminator"] = {"base_width": discriminator.base_width,
                                 "scaling_levels": discriminator.scaling_levels}
        if disc_optimizer is not None:
            meta["disc_optimizer"] = {"config": disc_optimizer.config.to_dict(),
                                      "iteration": disc_optimizer.iteration}
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    if extra:
        meta["extra"] = extra
    return Checkpoint(model.architecture, model.base_width, model.scaling_levels, tensors, meta)


def save_checkpoint(path, model, optimizer=None, **kwargs) -> Checkpoint:
    ckpt = make_checkpoint(model, optimizer, **kwargs)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ckpt.to_bytes())
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes())


def restore_model(ckpt: Checkpoint, model, role: str = "model", optimizer=None) -> None:
    """Copy weights (and optimizer slots if given) into a same-shaped model."""
    if role == "model":
        expected = (ckpt.architecture, ckpt.base_width, ckpt.scaling_levels)
        actual = (model.architecture, model.base_width, model.scaling_levels)
        if expected != actual:
            raise ArchitectureMismatchError(f"checkpoint holds {expected}, model is {actual}")
    params = model.parameters()
    buffers = model.buffers()
    want = {f"{role}/param/{n}" for n in params} | {f"{role}/buffer/{n}" for n in buffers}
    have = {n for n in ckpt.tensors if n.startswith(f"{role}/param/") or n.startswith(f"{role}/buffer/")}
    if want != have:
        missing = sorted(want - have)[:3]
        unexpected = sorted(have - want)[:3]
        raise CheckpointMismatchError(f"tensor names differ: missing {missing}, unexpected {unexpected}")
    for name, p in params.items():
        src = ckpt.tensors[f"{role}/param/{name}"]
        if src.shape != p.shape:
            raise CheckpointMismatchError(f"{name}: checkpoint shape {src.shape} != model shape {p.shape}")
        p.data = src.copy()
        if optimizer is not None:
            for slot in OPT_SLOTS:
                key = f"{role}/opt/{name}/{slot}"
                if key not in ckpt.tensors:
                    raise CheckpointMismatchError(f"optimizer state {key} missing")
                setattr(p, slot, ckpt.tensors[key].astype(p.data.dtype))
    for name, buf in buffers.items():
        src = ckpt.tensors[f"{role}/buffer/{name}"]
        if src.shape != buf.shape:
            raise CheckpointMismatchError(f"{name}: checkpoint shape {src.shape} != buffer shape {buf.shape}")
        buf[...] = src
    if optimizer is not None:
        key = "optimizer" if role == "model" else "disc_optimizer"
        optimizer.iteration = int(ckpt.meta.get(key, {}).get("iteration", 0))
