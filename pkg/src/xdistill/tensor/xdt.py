"""XDT1 tensor files.

Layout: magic ``XDT1``, little-endian u32 rank, u32 dims[rank], then a
little-endian float32 payload in row-major order.
"""

import struct

import numpy as np

from xdistill.errors import FormatError

MAGIC = b"XDT1"


def encode_tensor(array):
    array = np.asarray(array)
    header = MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_tensor(buf, offset=0):
    """Decode one tensor starting at ``offset``; returns ``(array, next_offset)``."""
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("bad XDT1 magic", offset)
    pos = offset + 4
    if len(buf) < pos + 4:
        raise FormatError("truncated XDT1 rank", pos)
    (rank,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if rank > 16:
        raise FormatError(f"implausible XDT1 rank {rank}", pos - 4)
    if len(buf) < pos + 4 * rank:
        raise FormatError("truncated XDT1 dims", pos)
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    nbytes = 4 * count
    if len(buf) < pos + nbytes:
        raise FormatError(f"truncated XDT1 payload: need {nbytes} bytes, have {len(buf) - pos}", pos)
    array = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(dims)
    return array, pos + nbytes


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after XDT1 tensor", end)
    return array
