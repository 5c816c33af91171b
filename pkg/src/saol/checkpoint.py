"""Self-describing binary checkpoints.

Layout, all little-endian: the magic bytes ``SAOL``, a u32 format version,
a u32 tensor count, then per tensor a u32 name length, the UTF-8 name, a
u32 rank, one u32 extent per axis, and the float32 payload in C order.

Besides model parameters a training checkpoint stores optimizer momentum
buffers under ``opt.momentum.*`` and metadata under ``meta.*``: the epoch
counter, the architecture (enough to rebuild the model without outside
configuration), and the full PCG64 generator state split into 16-bit limbs
so every value is exactly representable as float32 and resuming replays
the identical draw sequence.
"""

from __future__ import annotations

import struct

import numpy as np

from .backbone import BackboneConfig
from .head import HeadConfig, SaolClassifier

MAGIC = b"SAOL"
VERSION = 1

_MAX_NAME = 4096
_MAX_RANK = 8


class CheckpointError(Exception):
    """Unreadable, truncated, or inconsistent checkpoint."""


# ===== Raw tensor container =====


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            # asarray, not ascontiguousarray: the latter promotes rank 0 to 1
            data = np.asarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            if not 0 < len(encoded) <= _MAX_NAME:
                raise ValueError(f"bad tensor name {name!r}")
            if data.ndim > _MAX_RANK:
                raise ValueError(f"{name}: rank {data.ndim} above limit {_MAX_RANK}")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a checkpoint back as {name: float32 array}, validating layout."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint: {e}") from e
    with f:
        if _read_exact(f, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            if not 0 < name_len <= _MAX_NAME:
                raise CheckpointError(f"{path}: tensor name length {name_len} out of range")
            name = _read_exact(f, name_len).decode("utf-8")
            if name in tensors:
                raise CheckpointError(f"{path}: duplicate tensor {name!r}")
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            if rank > _MAX_RANK:
                raise CheckpointError(f"{path}: tensor {name!r} rank {rank} out of range")
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            if size > 1 << 31:
                raise CheckpointError(f"{path}: tensor {name!r} too large")
            payload = _read_exact(f, 4 * size)
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing data after last tensor")
    return tensors


# ===== Generator state as float32-safe limbs =====


def _to_limbs(value: int, count: int) -> np.ndarray:
    if value < 0 or value >= 1 << (16 * count):
        raise ValueError(f"{value} does not fit in {count} 16-bit limbs")
    return np.array([(value >> (16 * k)) & 0xFFFF for k in range(count)], dtype=np.float32)


def _from_limbs(limbs: np.ndarray) -> int:
    return sum(int(v) << (16 * k) for k, v in enumerate(limbs))


def encode_rng(rng: np.random.Generator) -> dict[str, np.ndarray]:
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise ValueError(f"unsupported generator {state['bit_generator']}")
    return {
        "meta.rng.state": _to_limbs(state["state"]["state"], 8),
        "meta.rng.inc": _to_limbs(state["state"]["inc"], 8),
        "meta.rng.extra": np.concatenate(
            [
                np.array([float(state["has_uint32"])], dtype=np.float32),
                _to_limbs(int(state["uinteger"]), 2),
            ]
        ),
    }


def decode_rng(tensors: dict[str, np.ndarray]) -> np.random.Generator:
    extra = tensors["meta.rng.extra"]
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {
            "state": _from_limbs(tensors["meta.rng.state"]),
            "inc": _from_limbs(tensors["meta.rng.inc"]),
        },
        "has_uint32": int(extra[0]),
        "uinteger": _from_limbs(extra[1:]),
    }
    return rng


# ===== Model and training state =====


def _encode_arch(model: SaolClassifier) -> dict[str, np.ndarray]:
    b, h = model.backbone_config, model.head_config

    def arr(values):
        return np.array(values, dtype=np.float32)

    return {
        "meta.arch.backbone": arr([b.in_channels, b.layers_per_block, b.width]),
        "meta.arch.channels": arr(b.channels),
        "meta.arch.strides": arr(b.strides),
        "meta.arch.fused": arr(model.fused_blocks),
        "meta.arch.head": arr(
            [
                h.num_classes,
                1 if h.with_mask else 0,
                1 if h.with_gapfc else 0,
                h.proj_channels or 0,
                h.attn_channels or 0,
                h.out_hw[0] if h.out_hw else 0,
                h.out_hw[1] if h.out_hw else 0,
                1 if h.fused_blocks is not None else 0,
            ]
        ),
    }


def _decode_arch(tensors: dict[str, np.ndarray], dtype) -> SaolClassifier:
    try:
        bb = tensors["meta.arch.backbone"]
        head = tensors["meta.arch.head"]
        channels = tuple(int(c) for c in tensors["meta.arch.channels"])
        strides = tuple(int(s) for s in tensors["meta.arch.strides"])
        fused = tuple(int(i) for i in tensors["meta.arch.fused"])
    except KeyError as e:
        raise CheckpointError(f"missing architecture record {e}") from e
    backbone_config = BackboneConfig(
        in_channels=int(bb[0]),
        channels=channels,
        strides=strides,
        layers_per_block=int(bb[1]),
        width=int(bb[2]),
    )
    out_hw = (int(head[5]), int(head[6])) if head[5] else None
    head_config = HeadConfig(
        num_classes=int(head[0]),
        fused_blocks=fused if head[7] else None,
        out_hw=out_hw,
        proj_channels=int(head[3]) or None,
        attn_channels=int(head[4]) or None,
        with_mask=bool(head[1]),
        with_gapfc=bool(head[2]),
    )
    return SaolClassifier(backbone_config, head_config, seed=0, dtype=dtype)


def save_state(
    path: str,
    model: SaolClassifier,
    *,
    momentum: dict[str, np.ndarray] | None = None,
    epoch: int = 0,
    rng: np.random.Generator | None = None,
) -> None:
    tensors: dict[str, np.ndarray] = {k: p.data for k, p in model.named_params().items()}
    if momentum is not None:
        for k, v in momentum.items():
            tensors["opt.momentum." + k] = v
    tensors["meta.epoch"] = np.array([epoch], dtype=np.float32)
    if rng is not None:
        tensors.update(encode_rng(rng))
    tensors.update(_encode_arch(model))
    save_tensors(path, tensors)


def load_state(
    path: str, *, dtype=np.float32
) -> tuple[SaolClassifier, dict[str, np.ndarray], int, np.random.Generator | None]:
    """Rebuild (model, momentum, epoch, rng) from a checkpoint alone."""
    tensors = load_tensors(path)
    model = _decode_arch(tensors, dtype)
    params = model.named_params()
    for name, param in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        stored = tensors[name]
        if stored.shape != param.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {stored.shape}, "
                f"model wants {param.data.shape}"
            )
        param.data = stored.astype(dtype)
    momentum = {}
    for name, value in tensors.items():
        if name.startswith("opt.momentum."):
            key = name[len("opt.momentum.") :]
            if key not in params:
                raise CheckpointError(f"{path}: momentum for unknown parameter {key!r}")
            momentum[key] = value.astype(dtype)
    epoch = int(tensors["meta.epoch"][0]) if "meta.epoch" in tensors else 0
    rng = decode_rng(tensors) if "meta.rng.state" in tensors else None
    return model, momentum, epoch, rng


def load_model(path: str, *, dtype=np.float32) -> SaolClassifier:
    return load_state(path, dtype=dtype)[0]
