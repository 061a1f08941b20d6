"""Weight serialization: the PLRW container format.

Layout (little-endian): magic "PLRW", u32 format version, fingerprint
(u32 length + utf-8), dtype tag byte, u32 tensor count, then per tensor:
name (u32 length + utf-8), dtype tag byte, u8 rank, u32 dims, raw payload.
Round-trips are bit-exact; loading into a different architecture fails on
the fingerprint before any tensor is touched.
"""

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import WeightsFormatError

MAGIC = b"PLRW"
VERSION = 1

DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_TAG_BYTES = {"f32": 0, "f64": 1}
_BYTE_TAGS = {0: np.float32, 1: np.float64}


@dataclass
class ModelWeights:
    tensors: dict        # name -> ndarray, insertion-ordered
    arch: str            # architecture fingerprint
    dtype: str           # "f32" or "f64"


def save_weights(weights, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        arch = weights.arch.encode("utf-8")
        fh.write(struct.pack("<I", len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<BI", _TAG_BYTES[weights.dtype], len(weights.tensors)))
        for name, tensor in weights.tensors.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            tag = _TAG_BYTES[DTYPE_TAGS[tensor.dtype]]
            fh.write(struct.pack("<BB", tag, tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            little = np.dtype(tensor.dtype).newbyteorder("<")
            fh.write(np.ascontiguousarray(tensor).astype(little, copy=False).tobytes())


def load_weights(path):
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise WeightsFormatError("truncated weight file")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    def take_bytes(n):
        nonlocal off
        if off + n > len(data):
            raise WeightsFormatError("truncated weight file")
        chunk = data[off:off + n]
        off += n
        return chunk

    if take_bytes(4) != MAGIC:
        raise WeightsFormatError("bad magic; not a PLRW weight file")
    (version,) = take("<I")
    if version != VERSION:
        raise WeightsFormatError(f"unsupported weight format version {version}")
    (arch_len,) = take("<I")
    arch = take_bytes(arch_len).decode("utf-8")
    dtype_byte, count = take("<BI")
    if dtype_byte not in _BYTE_TAGS:
        raise WeightsFormatError(f"unknown dtype tag {dtype_byte}")

    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = take_bytes(name_len).decode("utf-8")
        tag, rank = take("<BB")
        if tag not in _BYTE_TAGS:
            raise WeightsFormatError(f"unknown dtype tag {tag} for {name}")
        dims = take(f"<{rank}I")
        dtype = np.dtype(_BYTE_TAGS[tag]).newbyteorder("<")
        payload = take_bytes(int(np.prod(dims)) * dtype.itemsize)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(
            _BYTE_TAGS[tag])
    return ModelWeights(tensors=tensors, arch=arch,
                        dtype={0: "f32", 1: "f64"}[dtype_byte])
