"""Minimal NPY v1.0 reader/writer.

Only the slice of the format this project exchanges is accepted: version 1.0,
little-endian ``<f4`` / ``<f8`` / ``<i8``, C order, rank 1 or 2. The total
header (magic + version + length field + dict) is padded with spaces to a
multiple of 64 bytes and terminated with a newline, so files are bit-exact
reproducible and match what numpy itself writes.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"\x93NUMPY"
VERSION = (1, 0)
SUPPORTED_DTYPES = {"<f4": np.float32, "<f8": np.float64, "<i8": np.int64}
_DESCR_FOR = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8", np.dtype(np.int64): "<i8"}


def write_npy(path: str | Path, array: np.ndarray) -> None:
    """Write ``array`` as NPY v1.0. Raises FormatError for unsupported arrays."""
    array = np.ascontiguousarray(array)
    if array.dtype not in _DESCR_FOR:
        raise FormatError(f"write_npy: unsupported dtype {array.dtype} (want f32/f64/i64)")
    if array.ndim not in (1, 2):
        raise FormatError(f"write_npy: unsupported rank {array.ndim} (want 1 or 2)")
    descr = _DESCR_FOR[array.dtype]
    shape = str(array.shape) if array.ndim == 2 else f"({array.shape[0]},)"
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}"
    # magic(6) + version(2) + header-length field(2) + header padded to 64-byte total
    unpadded = len(MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header_bytes = (header + " " * pad + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes(VERSION))
        fh.write(struct.pack("<H", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(array.tobytes())


def read_npy(path: str | Path) -> np.ndarray:
    """Read an NPY v1.0 file written under the constraints above."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10:
        raise FormatError(f"{path}: truncated NPY header")
    if data[:6] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:6]!r}, not an NPY file")
    version = (data[6], data[7])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported NPY version {version[0]}.{version[1]}")
    (header_len,) = struct.unpack("<H", data[8:10])
    header_end = 10 + header_len
    if len(data) < header_end:
        raise FormatError(f"{path}: truncated NPY header")
    try:
        header = ast.literal_eval(data[10:header_end].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unparseable NPY header: {exc}") from exc
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= set(header):
        raise FormatError(f"{path}: NPY header missing required keys")
    descr = header["descr"]
    if descr not in SUPPORTED_DTYPES:
        raise FormatError(f"{path}: unsupported dtype {descr!r} (want one of {sorted(SUPPORTED_DTYPES)})")
    if header["fortran_order"]:
        raise FormatError(f"{path}: Fortran-order arrays are not supported")
    shape = header["shape"]
    if not isinstance(shape, tuple) or len(shape) not in (1, 2):
        raise FormatError(f"{path}: unsupported shape {shape} (want rank 1 or 2)")
    dtype = np.dtype(SUPPORTED_DTYPES[descr])
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes but header shape {shape} "
            f"({descr}) needs {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
