"""
Binary checkpoints for detectors and navigation policies

Layout (all integers little-endian):
    magic        8 bytes  b"EDGENAV\\x00"
    version      u16
    header_len   u32, then a UTF-8 JSON header (kind, model config, normalization stats, extra)
    tensor_count u32, then per tensor:
        name_len u16 + UTF-8 name
        dtype_len u8 + numpy dtype string (e.g. "<f8")
        ndim u8 + ndim x u32 shape
        payload_len u64 + little-endian payload
    sha256 of every preceding byte (32 bytes)
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from autodiff import Module
from detector import DetectorModel, ModelConfig, build_model
from errors import CheckpointError, ChecksumError, VersionError
from ppo import PolicyNet
from utils.helpers import write_bytes_atomic

logger = logging.getLogger(__name__)

MAGIC = b"EDGENAV\x00"
FORMAT_VERSION = 1
DIGEST_SIZE = 32
KIND_DETECTOR = "detector"
KIND_POLICY = "policy"


@dataclass
class CheckpointData:
    version: int
    header: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    file_size: int

    @property
    def kind(self) -> str:
        return str(self.header.get("kind", ""))

    @property
    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


# ======================================================================
# Encoding
# ======================================================================


def _describe(model: Module) -> Dict[str, Any]:
    if isinstance(model, DetectorModel):
        return {
            "kind": KIND_DETECTOR,
            "config": model.cfg.to_dict(),
            "norm_mean": [float(v) for v in model.norm_mean],
            "norm_std": [float(v) for v in model.norm_std],
        }
    if isinstance(model, PolicyNet):
        return {
            "kind": KIND_POLICY,
            "config": {"obs_dim": model.obs_dim, "num_actions": model.num_actions, "hidden": model.fc1.out_features},
        }
    raise CheckpointError(f"cannot checkpoint a {type(model).__name__}")


def encode_checkpoint(model: Module, extra: Optional[Dict[str, Any]] = None) -> bytes:
    header = _describe(model)
    header["extra"] = extra or {}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    state = model.state_dict()

    parts: List[bytes] = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(header_bytes)), header_bytes]
    parts.append(struct.pack("<I", len(state)))
    for name, array in state.items():
        little = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
        name_bytes = name.encode("utf-8")
        dtype_bytes = little.dtype.str.encode("ascii")
        parts.append(struct.pack("<H", len(name_bytes)) + name_bytes)
        parts.append(struct.pack("<B", len(dtype_bytes)) + dtype_bytes)
        parts.append(struct.pack("<B", little.ndim) + struct.pack(f"<{little.ndim}I", *little.shape))
        payload = little.tobytes(order="C")
        parts.append(struct.pack("<Q", len(payload)) + payload)
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: Module, path: str, extra: Optional[Dict[str, Any]] = None) -> int:
    """Atomically write the checkpoint; returns the number of bytes written"""
    payload = encode_checkpoint(model, extra)
    write_bytes_atomic(path, payload)
    logger.info(f"saved checkpoint {path} ({len(payload):,} bytes)")
    return len(payload)


# ======================================================================
# Decoding
# ======================================================================


class _Reader:
    def __init__(self, data: bytes, start: int, end: int):
        self.data = data
        self.pos = start
        self.end = end

    def take(self, count: int) -> bytes:
        if self.pos + count > self.end:
            raise CheckpointError(f"checkpoint body ends early at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> CheckpointData:
    if len(data) < len(MAGIC) + 2:
        raise ChecksumError(f"{source}: file too short to be a checkpoint ({len(data)} bytes)")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<H", data[len(MAGIC) : len(MAGIC) + 2])
    if version != FORMAT_VERSION:
        raise VersionError(f"{source}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    if len(data) < len(MAGIC) + 2 + DIGEST_SIZE:
        raise ChecksumError(f"{source}: truncated checkpoint")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{source}: checksum mismatch (truncated or corrupted file)")

    reader = _Reader(data, len(MAGIC) + 2, len(body))
    (header_len,) = reader.unpack("<I")
    header = json.loads(reader.take(header_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (dtype_len,) = reader.unpack("<B")
        dtype = np.dtype(reader.take(dtype_len).decode("ascii"))
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        (payload_len,) = reader.unpack("<Q")
        array = np.frombuffer(reader.take(payload_len), dtype=dtype).reshape(shape)
        tensors[name] = array.astype(dtype.newbyteorder("="), copy=True)
    if reader.pos != len(body):
        raise CheckpointError(f"{source}: {len(body) - reader.pos} trailing bytes after the last tensor")
    return CheckpointData(version, header, tensors, len(data))


def read_checkpoint(path: str) -> CheckpointData:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), path)


def load_checkpoint(path: str) -> Union[DetectorModel, PolicyNet]:
    """Rebuild the model described by the header and load every tensor bit-exactly"""
    data = read_checkpoint(path)
    config = data.header.get("config", {})
    if data.kind == KIND_DETECTOR:
        model: Union[DetectorModel, PolicyNet] = build_model(ModelConfig.from_dict(config))
        model.load_state_dict(data.tensors)
        model.set_normalization(data.header.get("norm_mean", [0.0] * 3), data.header.get("norm_std", [1.0] * 3))
    elif data.kind == KIND_POLICY:
        model = PolicyNet(config["obs_dim"], config["num_actions"], config["hidden"])
        model.load_state_dict(data.tensors)
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {data.kind!r}")
    logger.info(f"loaded {data.kind} checkpoint {path}")
    return model


def load_detector(path: str) -> DetectorModel:
    model = load_checkpoint(path)
    if not isinstance(model, DetectorModel):
        raise CheckpointError(f"{path} holds a policy, expected a detector")
    return model


def load_policy(path: str) -> PolicyNet:
    model = load_checkpoint(path)
    if not isinstance(model, PolicyNet):
        raise CheckpointError(f"{path} holds a detector, expected a policy")
    return model


def inspect_checkpoint(path: str) -> Dict[str, Any]:
    """Header metadata, per-tensor census and float32 model size"""
    data = read_checkpoint(path)
    params = data.num_parameters
    return {
        "path": path,
        "kind": data.kind,
        "version": data.version,
        "config": data.header.get("config", {}),
        "extra": data.header.get("extra", {}),
        "params": params,
        "size_mb": 4 * params / 2**20,
        "file_bytes": data.file_size,
        "tensors": [(name, str(t.dtype), tuple(t.shape), int(t.size)) for name, t in data.tensors.items()],
    }
