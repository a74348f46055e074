"""Binary model container.

Layout: magic "BUSM", format version u32, tensor count u32, then one
manifest entry per tensor (u32 name length, utf-8 name, u32 rank, rank
u32 dims), then all payloads as little-endian float32 in manifest order,
closed by a CRC32 of the concatenated payload bytes. All integers are
little-endian.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .model import DecisionModel, ModelConfig, param_names, param_shape

MAGIC = b"BUSM"
VERSION = 1


class ModelFileError(RuntimeError):
    pass


def save_model(model: DecisionModel, path) -> None:
    names = param_names(model.config)
    manifest = bytearray()
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        nb = name.encode("utf-8")
        manifest += struct.pack("<I", len(nb)) + nb
        manifest += struct.pack("<I", arr.ndim)
        manifest += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(names)))
        fh.write(manifest)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF))


def load_model(path, cfg: ModelConfig, dtype=np.float32) -> DecisionModel:
    """Read a model file and validate it against ``cfg`` tensor by tensor."""
    with open(path, "rb") as fh:
        data = fh.read()

    def _need(n: int, what: str) -> None:
        if len(data) < n:
            raise ModelFileError(f"{path}: truncated file while reading {what}")

    _need(12, "header")
    if data[:4] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version}")
    expected = param_names(cfg)
    if count != len(expected):
        raise ModelFileError(
            f"{path}: file holds {count} tensors, config implies {len(expected)}"
        )

    off = 12
    shapes = []
    for exp_name in expected:
        _need(off + 4, "manifest")
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        _need(off + nlen + 4, "manifest")
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        _need(off + 4 * rank, "manifest")
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        if name != exp_name:
            raise ModelFileError(f"{path}: tensor '{name}' where '{exp_name}' was expected")
        want = param_shape(name, cfg)
        if tuple(dims) != want:
            raise ModelFileError(
                f"{path}: tensor '{name}' has shape {tuple(dims)}, config implies {want}"
            )
        shapes.append((name, tuple(dims)))

    n_floats = sum(int(np.prod(s, dtype=np.int64)) for _, s in shapes)
    _need(off + 4 * n_floats + 4, "payload")
    payload = data[off : off + 4 * n_floats]
    (crc,) = struct.unpack_from("<I", data, off + 4 * n_floats)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ModelFileError(f"{path}: payload checksum mismatch")

    params = {}
    pos = 0
    for name, shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=4 * pos).reshape(shape)
        params[name] = arr.astype(dtype)
        pos += n
    return DecisionModel(config=cfg, params=params)
