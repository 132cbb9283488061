"""Binary checkpoints.

Layout (all integers little-endian)::

    8s   magic "GLFUSE01"
    u32  format version
    u32  tensor count
    per tensor: u16 name length, name (utf-8), u8 ndim, u32 * ndim shape,
                u64 payload offset, u64 payload bytes
    float32 payloads, contiguous, C order
    u64  metadata length, metadata JSON (utf-8)

Tensor names carry a prefix: ``param:``, ``buffer:<layer>:<stat>``,
``adam_m:`` or ``adam_v:``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..clsnet import ClassifierModel, ResNetSpec
from ..optim import AdamState
from ..segnet import UnetModel, UnetSpec
from ..tensor import Tensor

MAGIC = b"GLFUSE01"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    spec: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    adam: AdamState | None = None
    epoch: int = 0
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"param:{k}": v for k, v in self.params.items()}
        for layer, stats in self.buffers.items():
            for s, v in stats.items():
                out[f"buffer:{layer}:{s}"] = v
        if self.adam is not None:
            out.update({f"adam_m:{k}": v for k, v in self.adam.m.items()})
            out.update({f"adam_v:{k}": v for k, v in self.adam.v.items()})
        return out


def _f32(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype != np.float32:
        if not np.issubdtype(a.dtype, np.floating):
            raise CheckpointError(f"checkpoint tensors must be floating point, got {a.dtype}")
        a = a.astype(np.float32)
    return a.astype("<f4", order="C", copy=False)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = [(k, _f32(v)) for k, v in ckpt.tensors().items()]
    manifest = bytearray(MAGIC + struct.pack("<II", VERSION, len(tensors)))
    manifest_size = len(manifest) + sum(2 + len(k.encode()) + 1 + 4 * v.ndim + 16 for k, v in tensors)
    offset = manifest_size
    payload = bytearray()
    for name, arr in tensors:
        raw = name.encode()
        manifest += struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        manifest += struct.pack("<QQ", offset, arr.nbytes)
        payload += arr.tobytes()
        offset += arr.nbytes
    meta = {"kind": ckpt.kind, "spec": ckpt.spec, "epoch": ckpt.epoch, "rng_state": ckpt.rng_state,
            "meta": ckpt.meta}
    if ckpt.adam is not None:
        a = ckpt.adam
        meta["adam"] = {"beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "t": a.t}
    blob = json.dumps(meta, sort_keys=True).encode()
    Path(path).write_bytes(bytes(manifest) + bytes(payload) + struct.pack("<Q", len(blob)) + blob)


def _take(raw: bytes, pos: int, fmt: str):
    size = struct.calcsize(fmt)
    if pos + size > len(raw):
        raise CheckpointError("truncated checkpoint manifest")
    return struct.unpack_from(fmt, raw, pos), pos + size


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: magic mismatch")
    (version, count), pos = _take(raw, 8, "<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    end = pos
    for _ in range(count):
        (n,), pos = _take(raw, pos, "<H")
        if pos + n > len(raw):
            raise CheckpointError("truncated checkpoint manifest")
        name = raw[pos:pos + n].decode()
        (ndim,), pos = _take(raw, pos + n, "<B")
        shape, pos = _take(raw, pos, f"<{ndim}I")
        (offset, nbytes), pos = _take(raw, pos, "<QQ")
        if offset + nbytes > len(raw) or nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"truncated or inconsistent payload for {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
        end = max(end, offset + nbytes)
    (mlen,), pos = _take(raw, end, "<Q")
    if pos + mlen != len(raw):
        raise CheckpointError("truncated checkpoint metadata")
    meta = json.loads(raw[pos:pos + mlen].decode())
    params, buffers = {}, {}
    m, v = {}, {}
    for name, arr in tensors.items():
        prefix, _, rest = name.partition(":")
        if prefix == "param":
            params[rest] = arr
        elif prefix == "buffer":
            layer, _, stat = rest.rpartition(":")
            buffers.setdefault(layer, {})[stat] = arr
        elif prefix == "adam_m":
            m[rest] = arr
        elif prefix == "adam_v":
            v[rest] = arr
        else:
            raise CheckpointError(f"unknown tensor prefix in {name!r}")
    adam = AdamState(**meta["adam"], m=m, v=v) if "adam" in meta else None
    return Checkpoint(meta["kind"], meta["spec"], params, buffers, adam, meta["epoch"], meta["rng_state"],
                      meta.get("meta", {}))


def _spec_from_dict(kind: str, spec: dict):
    if kind == "cls":
        return ResNetSpec(**{**spec, "stage_blocks": tuple(spec["stage_blocks"])})
    if kind in ("seg2d", "seg3d"):
        return UnetSpec(**spec)
    raise CheckpointError(f"unknown model kind {kind!r}")


def checkpoint_from_model(model, adam: AdamState | None = None, epoch: int = 0, meta: dict | None = None) -> Checkpoint:
    """Snapshot (copies) of a model's parameters, buffers and optimiser state."""
    rng = getattr(model, "rng", None)
    adam_copy = None
    if adam is not None:
        adam_copy = AdamState(adam.beta1, adam.beta2, adam.eps, adam.t,
                              {k: a.copy() for k, a in adam.m.items()}, {k: a.copy() for k, a in adam.v.items()})
    return Checkpoint(
        kind=model.kind,
        spec=model.spec_dict(),
        params={k: p.data.copy() for k, p in model.params.items()},
        buffers={k: {s: a.copy() for s, a in d.items()} for k, d in model.buffers.items()},
        adam=adam_copy,
        epoch=epoch,
        rng_state=rng.bit_generator.state if rng is not None else None,
        meta=dict(meta or {}),
    )


def model_from_checkpoint(ckpt: Checkpoint):
    spec = _spec_from_dict(ckpt.kind, ckpt.spec)
    params = {k: Tensor(v.copy(), requires_grad=True) for k, v in ckpt.params.items()}
    buffers = {k: {s: a.copy() for s, a in d.items()} for k, d in ckpt.buffers.items()}
    if ckpt.kind == "cls":
        return ClassifierModel(spec, params, buffers)
    rng = np.random.default_rng()
    if ckpt.rng_state is not None:
        rng.bit_generator.state = ckpt.rng_state
    return UnetModel(spec, params, buffers, rng)
