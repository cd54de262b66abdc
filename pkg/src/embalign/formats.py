"""Binary file formats for embeddings and models.

Embedding files (magic ``EMB1``) carry a little-endian header
(version u32 = 1, rows u32, cols u32) followed by rows*cols IEEE-754
binary32 values, row-major. Model files (magic ``MDL1``) carry the
activation tag, the norm exponent q, every weight matrix in float64
row-major, and end with an 8-byte FNV-1a digest of all preceding bytes.

Embeddings are stored in single precision (storage parity with typical
embedding dumps); model payloads keep the full training precision.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .hashing import FNV64_OFFSET, fnv1a64
from .nn import Activation, MlpParams

__all__ = [
    "read_embeddings",
    "write_embeddings",
    "read_model",
    "write_model",
    "model_to_bytes",
    "model_from_bytes",
    "bank_digest",
]

EMB_MAGIC = b"EMB1"
MDL_MAGIC = b"MDL1"
FORMAT_VERSION = 1


def write_embeddings(path: str | Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataFormatError(f"embeddings must be 2-d, got ndim={values.ndim}")
    if not np.all(np.isfinite(values)):
        raise DataFormatError("refusing to write non-finite embedding values")
    rows, cols = values.shape
    header = EMB_MAGIC + struct.pack("<III", FORMAT_VERSION, rows, cols)
    payload = values.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_embeddings(path: str | Path) -> np.ndarray:
    """Load an embedding file; values come back as float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DataFormatError(f"{path}: file too short for an embedding header ({len(raw)} bytes)")
    if raw[:4] != EMB_MAGIC:
        raise DataFormatError(f"{path}: bad magic at offset 0: {raw[:4]!r}")
    version, rows, cols = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at offset 4")
    expected = rows * cols * 4
    actual = len(raw) - 16
    if actual != expected:
        raise DataFormatError(
            f"{path}: payload holds {actual} bytes but {rows}x{cols} entries need {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=16).reshape(rows, cols)
    out = values.astype(np.float64)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise DataFormatError(f"{path}: non-finite value at row {bad[0]}, col {bad[1]}")
    return out


def model_to_bytes(params: MlpParams) -> bytes:
    parts = [MDL_MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.layers))]
    parts.append(struct.pack("<B", params.activation.code))
    if params.activation.kind == "leaky_relu":
        parts.append(struct.pack("<d", params.activation.slope))
    parts.append(struct.pack("<d", params.q))
    for w in params.layers:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
        parts.append(w.astype("<f8").tobytes(order="C"))
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def model_from_bytes(raw: bytes, origin: str = "<bytes>") -> MlpParams:
    if len(raw) < 12 + 8:
        raise DataFormatError(f"{origin}: file too short for a model header ({len(raw)} bytes)")
    if raw[:4] != MDL_MAGIC:
        raise DataFormatError(f"{origin}: bad magic at offset 0: {raw[:4]!r}")
    body, stored = raw[:-8], struct.unpack("<Q", raw[-8:])[0]
    if fnv1a64(body) != stored:
        raise DataFormatError(f"{origin}: digest mismatch at offset {len(raw) - 8}")
    version, layer_count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{origin}: unsupported version {version} at offset 4")
    if layer_count < 1:
        raise DataFormatError(f"{origin}: model needs at least one layer")
    offset = 12
    code = raw[offset]
    offset += 1
    slope = 0.0
    if code == 1:
        (slope,) = struct.unpack_from("<d", raw, offset)
        offset += 8
    (q,) = struct.unpack_from("<d", raw, offset)
    offset += 8
    layers = []
    for i in range(layer_count):
        if offset + 8 > len(body):
            raise DataFormatError(f"{origin}: truncated layer header for layer {i}")
        rows, cols = struct.unpack_from("<II", raw, offset)
        offset += 8
        nbytes = rows * cols * 8
        if offset + nbytes > len(body):
            raise DataFormatError(
                f"{origin}: layer {i} needs {nbytes} payload bytes but only "
                f"{len(body) - offset} remain"
            )
        w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset)
        layers.append(w.reshape(rows, cols).copy())
        offset += nbytes
    if offset != len(body):
        raise DataFormatError(f"{origin}: {len(body) - offset} unexpected trailing bytes")
    try:
        activation = Activation.from_code(code, slope)
        return MlpParams(layers, activation, q)
    except Exception as exc:
        raise DataFormatError(f"{origin}: invalid model contents: {exc}") from exc


def write_model(path: str | Path, params: MlpParams) -> None:
    Path(path).write_bytes(model_to_bytes(params))


def read_model(path: str | Path) -> MlpParams:
    return model_from_bytes(Path(path).read_bytes(), origin=str(path))


def bank_digest(models: list[MlpParams]) -> int:
    """Chained FNV-1a digest over the serialized bytes of each model."""
    h = FNV64_OFFSET
    for params in models:
        h = fnv1a64(model_to_bytes(params), h)
    return h
