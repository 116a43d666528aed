"""Portable Float Map (PFM) encoding for HDR environment maps and probe renders.

Little-endian color PFM with scale -1.0. Rows are stored bottom-to-top as the
format prescribes, so files stay readable by standard tools; round-trips are
bit-exact since no resampling or codec is involved.
"""

from __future__ import annotations

import numpy as np

from .core import ArbenchError


class PfmError(ArbenchError):
    code = "PfmError"


def encode_pfm(values: np.ndarray) -> bytes:
    """Encode a (h, w, 3) float32 array as little-endian color PFM bytes."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise PfmError("PFM encoder expects a (height, width, 3) array")
    h, w = arr.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    return header + arr[::-1].astype("<f4").tobytes()


def decode_pfm(buf: bytes) -> np.ndarray:
    """Decode PFM bytes back to a (h, w, 3) float32 array."""
    try:
        magic_end = buf.index(b"\n")
        dims_end = buf.index(b"\n", magic_end + 1)
        scale_end = buf.index(b"\n", dims_end + 1)
    except ValueError:
        raise PfmError("truncated PFM header") from None
    magic = buf[:magic_end]
    if magic != b"PF":
        raise PfmError(f"unsupported PFM magic {magic!r} (color 'PF' only)")
    try:
        w, h = (int(t) for t in buf[magic_end + 1 : dims_end].split())
        scale = float(buf[dims_end + 1 : scale_end])
    except ValueError:
        raise PfmError("malformed PFM dimensions or scale") from None
    dtype = "<f4" if scale < 0 else ">f4"
    data = buf[scale_end + 1 :]
    expected = w * h * 3 * 4
    if len(data) != expected:
        raise PfmError(f"PFM payload is {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w, 3)
    return arr[::-1].astype(np.float32)
