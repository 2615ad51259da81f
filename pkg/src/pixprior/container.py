"""Binary matrix container.

A block is the magic ``PXP1\\n``, an ASCII line ``"rows cols\\n"`` and then
``rows * cols`` little-endian float64 values in row-major order. Files may hold
several consecutive blocks.
"""
import io
import os

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"PXP1\n"
_DTYPE = np.dtype("<f8")


def write_block(stream, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    rows, cols = matrix.shape
    stream.write(MAGIC)
    stream.write(f"{rows} {cols}\n".encode("ascii"))
    stream.write(np.ascontiguousarray(matrix, dtype=_DTYPE).tobytes())


def read_block(stream):
    """Read one block from a binary stream, returning a read-only float64 array."""
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}")
    header = stream.readline(64)
    try:
        text = header.decode("ascii")
        if not text.endswith("\n"):
            raise ValueError
        rows, cols = (int(tok) for tok in text.split())
    except ValueError:
        raise FormatError(f"malformed header line {header!r}") from None
    if rows < 0 or cols < 0:
        raise FormatError(f"negative dimensions in header {header!r}")
    nbytes = rows * cols * _DTYPE.itemsize
    payload = stream.read(nbytes)
    if len(payload) != nbytes:
        raise ShapeError(
            f"header declares {rows}x{cols} = {rows * cols} values, "
            f"file holds {len(payload) // _DTYPE.itemsize}"
        )
    out = np.frombuffer(payload, dtype=_DTYPE).reshape(rows, cols).astype(np.float64)
    out.flags.writeable = False
    return out


def save_matrices(path, matrices):
    buf = io.BytesIO()
    for m in matrices:
        write_block(buf, m)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_matrices(path, count=None):
    """Load every block in ``path``; if ``count`` is given exactly that many must be present."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        data = fh.read()
    stream = io.BytesIO(data)
    out = []
    while stream.tell() < len(data):
        if count is not None and len(out) == count:
            raise ShapeError(f"trailing bytes after {count} matrices in {path}")
        out.append(read_block(stream))
    if count is not None and len(out) != count:
        raise FormatError(f"expected {count} matrices in {path}, found {len(out)}")
    return out


def save_matrix(path, matrix):
    save_matrices(path, [matrix])


def load_matrix(path):
    return load_matrices(path, count=1)[0]
