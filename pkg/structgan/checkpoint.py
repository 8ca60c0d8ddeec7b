"""Binary checkpoint: magic, version, config hash, then named little-endian float64 tensors.

Layout::

    b"SGANCKPT" | u32 version | 32-byte config hash | u32 entry count
    per entry: u32 name length | utf-8 name | u32 rank | rank x u32 dims | prod(dims) x f8

All integers are little-endian. Nothing time-dependent is stored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .autograd import Tensor
from .evaluation import GoldenClassifier
from .networks import ROLES, NetworkError, NetworkParams, NetworkSpec, build_network
from .trainer import SGANNetworks

MAGIC = b"SGANCKPT"
FORMAT_VERSION = 1
HASH_SIZE = 32
GOLDEN = "golden"
GOLDEN_ACCURACY = "golden.meta.test_accuracy"


class CheckpointError(ValueError):
    """Raised when a checkpoint cannot be written, read or matched to a config."""


@dataclass(frozen=True)
class Checkpoint:
    config_hash: bytes
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def network(self, spec: NetworkSpec, prefix: Optional[str] = None) -> NetworkParams:
        prefix = prefix or spec.role
        template = build_network(spec, 0)
        try:
            loaded = {name: Tensor(self.tensors[f"{prefix}.{name}"], requires_grad=True) for name in template.tensors}
        except KeyError as exc:
            raise CheckpointError(f"checkpoint has no tensor {exc.args[0]!r}") from exc
        try:
            return template.with_tensors(loaded)
        except (NetworkError, ValueError) as exc:
            raise CheckpointError(f"checkpoint does not fit network {prefix}: {exc}") from exc

    def networks(self, specs: Dict[str, NetworkSpec]) -> SGANNetworks:
        return SGANNetworks(**{role: self.network(specs[role]) for role in ROLES})

    def golden(self, spec: NetworkSpec) -> GoldenClassifier:
        if GOLDEN_ACCURACY not in self.tensors:
            raise CheckpointError("checkpoint carries no golden classifier")
        return GoldenClassifier(
            params=self.network(spec, prefix=GOLDEN),
            test_accuracy=float(self.tensors[GOLDEN_ACCURACY].reshape(-1)[0]),
        )


def collect_tensors(nets: SGANNetworks, golden: Optional[GoldenClassifier] = None) -> Dict[str, np.ndarray]:
    tensors: Dict[str, np.ndarray] = {}
    named = list(nets.items())
    if golden is not None:
        named.append((GOLDEN, golden.params))
    for prefix, params in named:
        for name, tensor in params.tensors.items():
            tensors[f"{prefix}.{name}"] = tensor.data
    if golden is not None:
        tensors[GOLDEN_ACCURACY] = np.array([golden.test_accuracy])
    return tensors


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    if len(checkpoint.config_hash) != HASH_SIZE:
        raise CheckpointError(f"config hash must be {HASH_SIZE} bytes")
    chunks = [MAGIC, np.array([checkpoint.version], dtype="<u4").tobytes(), checkpoint.config_hash]
    chunks.append(np.array([len(checkpoint.tensors)], dtype="<u4").tobytes())
    for name, array in checkpoint.tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype=np.float64)
        chunks.append(np.array([len(encoded)], dtype="<u4").tobytes())
        chunks.append(encoded)
        chunks.append(np.array([array.ndim, *array.shape], dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise CheckpointError(f"truncated checkpoint at byte {self.offset}")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self, count: int = 1) -> Tuple[int, ...]:
        return tuple(int(v) for v in np.frombuffer(self.take(4 * count), dtype="<u4"))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    reader = _Reader(raw)
    magic = reader.take(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_hash = reader.take(HASH_SIZE)
    (count,) = reader.u32()
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.u32()
        try:
            name = reader.take(name_length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor name is not valid utf-8") from exc
        (rank,) = reader.u32()
        dims = reader.u32(rank) if rank else ()
        size = int(np.prod(dims)) if dims else 1
        tensors[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    if reader.offset != len(raw):
        raise CheckpointError(f"{len(raw) - reader.offset} trailing bytes after the last tensor")
    return Checkpoint(config_hash=config_hash, tensors=tensors, version=version)


def save_checkpoint(
    path: Union[str, Path],
    config_hash: bytes,
    nets: SGANNetworks,
    golden: Optional[GoldenClassifier] = None,
) -> Path:
    path = Path(path)
    payload = encode_checkpoint(Checkpoint(config_hash=config_hash, tensors=collect_tensors(nets, golden)))
    staging = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        staging.write_bytes(payload)
        os.replace(staging, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: Union[str, Path], expected_hash: Optional[bytes] = None) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    checkpoint = decode_checkpoint(raw)
    if expected_hash is not None and checkpoint.config_hash != expected_hash:
        raise CheckpointError(f"{path} was written for a different config (use --force to override)")
    return checkpoint
