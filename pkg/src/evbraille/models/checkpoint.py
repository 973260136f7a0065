"""Binary checkpoint files.

Layout (little-endian)::

    b"BNET"  u32 version
    u32 n    n bytes  canonical JSON: {"arch": ..., "meta": ..., "tensors": [[name, shape], ...]}
    32 bytes SHA-256 of the parameter blob
    u64 m    m bytes  parameter blob: float32 tensors in the listed order

Tensors are the model's parameters and batch-norm running statistics in
state_dict order; the integer batch counters are not stored.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .nets import ArchConfig, BrailleNet

MAGIC = b"BNET"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file or architecture mismatch."""


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _stored_items(model: BrailleNet):
    return [(k, v) for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")]


@dataclass
class Checkpoint:
    arch: ArchConfig
    tensors: dict  # name -> float32 ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: BrailleNet, meta: dict | None = None) -> "Checkpoint":
        tensors = {k: v.detach().cpu().numpy().astype(np.float32).copy() for k, v in _stored_items(model)}
        return cls(model.arch, tensors, dict(meta or {}))

    def build_model(self) -> BrailleNet:
        model = BrailleNet(self.arch)
        expected = _stored_items(model)
        if [k for k, _ in expected] != list(self.tensors):
            raise CheckpointError("checkpoint tensors do not match the architecture")
        state = model.state_dict()
        for k, v in expected:
            arr = self.tensors[k]
            if tuple(arr.shape) != tuple(v.shape):
                raise CheckpointError(f"{k}: shape {arr.shape} does not match {tuple(v.shape)}")
            state[k] = torch.from_numpy(arr.copy())
        model.load_state_dict(state)
        model.eval()
        return model

    def blob(self) -> bytes:
        return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in self.tensors.values())

    def to_bytes(self) -> bytes:
        header = canonical_json(
            {
                "arch": self.arch.to_dict(),
                "meta": self.meta,
                "tensors": [[k, list(a.shape)] for k, a in self.tensors.items()],
            }
        )
        blob = self.blob()
        return b"".join(
            [
                MAGIC,
                struct.pack("<I", VERSION),
                struct.pack("<I", len(header)),
                header,
                hashlib.sha256(blob).digest(),
                struct.pack("<Q", len(blob)),
                blob,
            ]
        )

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<checkpoint>") -> "Checkpoint":
        try:
            if data[:4] != MAGIC:
                raise CheckpointError(f"{source}: bad magic {data[:4]!r}")
            (version,) = struct.unpack_from("<I", data, 4)
            if version != VERSION:
                raise CheckpointError(f"{source}: unsupported version {version}")
            (n,) = struct.unpack_from("<I", data, 8)
            header = json.loads(data[12 : 12 + n].decode("utf-8"))
            off = 12 + n
            digest = data[off : off + 32]
            (m,) = struct.unpack_from("<Q", data, off + 32)
            blob = data[off + 40 : off + 40 + m]
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: truncated or corrupt header ({exc})") from None
        if len(blob) != m or len(data) != off + 40 + m:
            raise CheckpointError(f"{source}: parameter blob length mismatch")
        if hashlib.sha256(blob).digest() != digest:
            raise CheckpointError(f"{source}: parameter hash mismatch")
        try:
            arch = ArchConfig.from_dict(header["arch"])
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"{source}: invalid architecture ({exc})") from None
        flat = np.frombuffer(blob, dtype="<f4")
        tensors, pos = {}, 0
        for name, shape in header["tensors"]:
            size = int(np.prod(shape)) if shape else 1
            if pos + size > flat.size:
                raise CheckpointError(f"{source}: blob too short for {name}")
            tensors[name] = flat[pos : pos + size].astype(np.float32).reshape(shape)
            pos += size
        if pos != flat.size:
            raise CheckpointError(f"{source}: {flat.size - pos} unused parameters in blob")
        ckpt = cls(arch, tensors, header.get("meta", {}))
        ckpt.build_model()  # validates names and shapes against the architecture
        return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes(), str(path))
