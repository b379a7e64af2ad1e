"""final_model.bin: 8-byte magic, u32 version, u32 dim, then dim float64, all little-endian."""

import struct

import numpy as np

from .errors import DimensionError, FedFWError

MAGIC = b"FEDFWMDL"
VERSION = 1
_HEADER = struct.Struct("<8sII")


class ModelFileError(FedFWError):
    pass


def save_model(path: str, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"model must be one-dimensional, got shape {x.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, x.shape[0]))
        f.write(x.astype("<f8").tobytes())


def load_model(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise ModelFileError(f"{path}: truncated header")
    magic, version, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported version {version}")
    body = blob[_HEADER.size :]
    if len(body) != 8 * dim:
        raise ModelFileError(f"{path}: expected {dim} values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").astype(np.float64)
