"""Dense float tensors and the binary container format shared by every module.

Core math runs in float64. Container files may store ``<f4`` or ``<f8``
payloads; 32-bit values are widened to 64-bit on read. The on-disk layout is
the version-1.0 array-exchange format (magic byte 0x93 + "NUMPY", a two-byte
little-endian header length, an ASCII header dict, then raw little-endian
row-major values), so files written here load with standard array tooling and
vice versa.
"""

import ast
import struct
from pathlib import Path

import numpy as np

MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
_HEADER_ALIGN = 64


class TensorFormatError(ValueError):
    """A tensor file violates the container format.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def as_tensor(values) -> np.ndarray:
    """Coerce to a C-order float64 array and reject non-finite values."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values (NaN or Inf)")
    return arr


def read_tensor(path) -> np.ndarray:
    """Read a tensor container file into a float64 array.

    Raises :class:`TensorFormatError` for malformed headers, unsupported
    element types, and truncated payloads, each reported with the byte offset
    of the offending region.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:6] != MAGIC:
        raise TensorFormatError("bad magic, not a tensor container", 0)
    if len(raw) < 8:
        raise TensorFormatError("truncated version field", 6)
    version = (raw[6], raw[7])
    if version != (1, 0):
        raise TensorFormatError(f"unsupported container version {version[0]}.{version[1]}", 6)
    if len(raw) < 10:
        raise TensorFormatError("truncated header-length field", 8)
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise TensorFormatError("truncated header", 10)
    try:
        header = ast.literal_eval(raw[10:header_end].decode("ascii"))
    except (ValueError, SyntaxError, UnicodeDecodeError):
        raise TensorFormatError("malformed header dict", 10) from None
    if not isinstance(header, dict):
        raise TensorFormatError("header is not a dict literal", 10)

    descr = header.get("descr")
    if descr not in _SUPPORTED_DESCRS:
        raise TensorFormatError(f"unsupported element type {descr!r}", 10)
    if header.get("fortran_order", False):
        raise TensorFormatError("fortran-order payload not supported", 10)
    shape = header.get("shape")
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise TensorFormatError(f"invalid shape {shape!r}", 10)

    dtype = _SUPPORTED_DESCRS[descr]
    count = 1
    for d in shape:
        count *= d
    expected = count * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) < expected:
        raise TensorFormatError(
            f"truncated payload: {len(payload)} bytes, expected {expected}", header_end
        )
    if len(payload) > expected:
        raise TensorFormatError(
            f"oversized payload: {len(payload)} bytes, expected {expected}", header_end
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"tensor file {path} contains non-finite values")
    return arr


def write_tensor(t, path, dtype: str = "<f8") -> None:
    """Write a tensor to a container file readable by :func:`read_tensor`.

    ``dtype`` selects the stored element type; ``<f8`` round-trips bitwise.
    """
    if dtype not in _SUPPORTED_DESCRS:
        raise ValueError(f"unsupported element type {dtype!r}, use '<f4' or '<f8'")
    arr = as_tensor(t).astype(_SUPPORTED_DESCRS[dtype], copy=False)
    base = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        dtype,
        repr(tuple(arr.shape)),
    )
    unpadded = 10 + len(base) + 1
    pad = (_HEADER_ALIGN - unpadded % _HEADER_ALIGN) % _HEADER_ALIGN
    header = (base + " " * pad + "\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(b"\x01\x00")
        f.write(struct.pack("<H", len(header)))
        f.write(header)
        f.write(arr.tobytes(order="C"))


def minmax_normalize(t) -> np.ndarray:
    """Affine-map values to [0, 1]; a constant input maps to all zeros.

    The constant rule makes a uniformly flat map (for example an all-zero
    gradient field) come out as an all-zero mask instead of erroring.
    """
    arr = as_tensor(t)
    if arr.size == 0:
        raise ValueError("cannot normalize an empty tensor")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
