"""
Binary model checkpoints.

Layout (little-endian):
    magic "AGUCKPT1" | arch code u8 | K u8 | len(dims) u16 | dims u32... | seed i64
    | parameter count u32 | per parameter: name length u16, name utf-8,
      ndim u8, shape u32..., float64 values
    | sha256 of everything before it (32 bytes)
"""
import hashlib
import logging
import struct
from pathlib import Path

import numpy as np
import torch

from agu.models.gnn import Architecture, GNN, init_model
from agu.numeric.tensor import DTYPE
from agu.utils.exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"AGUCKPT1"
DIGEST_SIZE = 32
_ARCH_CODES = {arch: code for code, arch in enumerate(Architecture)}
_CODE_ARCHS = {code: arch for arch, code in _ARCH_CODES.items()}


def encode_checkpoint(model: GNN) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<BBH", _ARCH_CODES[model.arch], model.num_layers, len(model.dims)),
        struct.pack(f"<{len(model.dims)}I", *model.dims),
        struct.pack("<q", model.seed),
    ]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        encoded = name.encode("utf-8")
        values = tensor.detach().cpu().numpy().astype("<f8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{values.ndim}I", values.ndim, *values.shape))
        parts.append(values.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk


def decode_checkpoint(data: bytes) -> GNN:
    """
    Rebuild a model from checkpoint bytes; parameters come back bitwise-identical.

    Raises:
        CheckpointError: bad magic, hash mismatch, or header/parameter disagreement
    """
    if len(data) < len(MAGIC) + DIGEST_SIZE or not data.startswith(MAGIC):
        raise CheckpointError("not an AGU checkpoint")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint content hash mismatch")

    reader = _Reader(body)
    reader.raw(len(MAGIC))
    code, num_layers, num_dims = reader.take("<BBH")
    if code not in _CODE_ARCHS:
        raise CheckpointError(f"unknown architecture code {code}")
    dims = list(reader.take(f"<{num_dims}I"))
    if num_layers != len(dims) - 1:
        raise CheckpointError(f"header says {num_layers} layers but dims {dims}")
    (seed,) = reader.take("<q")

    model = init_model(_CODE_ARCHS[code], dims, seed)
    expected = model.state_dict()
    (count,) = reader.take("<I")
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} parameters, model has {len(expected)}")
    loaded = {}
    for _ in range(count):
        (name_length,) = reader.take("<H")
        name = reader.raw(name_length).decode("utf-8")
        (ndim,) = reader.take("<B")
        shape = reader.take(f"<{ndim}I")
        if name not in expected or tuple(expected[name].shape) != tuple(shape):
            raise CheckpointError(f"unexpected parameter {name} with shape {tuple(shape)}")
        size = int(np.prod(shape, dtype=np.int64)) * 8
        values = np.frombuffer(reader.raw(size), dtype="<f8").reshape(shape)
        loaded[name] = torch.tensor(values, dtype=DTYPE)
    if reader.offset != len(body):
        raise CheckpointError("trailing bytes after the last parameter")
    model.load_state_dict(loaded)
    model.eval()
    return model


def write_checkpoint(model: GNN, path: Path) -> None:
    path = Path(path)
    path.write_bytes(encode_checkpoint(model))
    logger.info(f"Wrote {model.arch.value} checkpoint to {path}")


def read_checkpoint(path: Path) -> GNN:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    return decode_checkpoint(data)
