"""Binary snapshots of a flow state, built for bit-exact resume.

Layout (all little-endian): magic "HKTF", format version u32, n u8,
active-coordinate count u8, one u16 grid size per active coordinate, flow
time f64, step u64, then the field values as row-major f64.  The grid's
active coordinate indices are not stored; a checkpoint is only meaningful
next to the config that produced it, which the loader validates against.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError

MAGIC = b"HKTF"
VERSION = 1
_HEAD = struct.Struct("<4sIBB")
_TIME_STEP = struct.Struct("<dQ")


@dataclass(frozen=True)
class CheckpointData:
    n: int
    sizes: tuple
    t: float
    step: int
    values: np.ndarray


def encode(n, sizes, t, step, values):
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != tuple(sizes):
        raise CheckpointError(f"field shape {values.shape} does not match sizes {tuple(sizes)}")
    head = _HEAD.pack(MAGIC, VERSION, n, len(sizes))
    dims = struct.pack(f"<{len(sizes)}H", *sizes)
    meta = _TIME_STEP.pack(float(t), int(step))
    return head + dims + meta + values.tobytes()


def decode(blob):
    if len(blob) < _HEAD.size:
        raise CheckpointError("blob shorter than the fixed header")
    magic, version, n, count = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}, expected {VERSION}")
    offset = _HEAD.size
    dims_size = 2 * count
    if len(blob) < offset + dims_size + _TIME_STEP.size:
        raise CheckpointError("blob truncated inside the header")
    sizes = struct.unpack_from(f"<{count}H", blob, offset)
    offset += dims_size
    t, step = _TIME_STEP.unpack_from(blob, offset)
    offset += _TIME_STEP.size
    expected = 8 * int(np.prod(sizes)) if sizes else 8
    payload = blob[offset:]
    if len(payload) != expected:
        raise CheckpointError(
            f"payload is {len(payload)} bytes, expected exactly {expected} "
            f"for sizes {sizes}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(sizes).copy()
    return CheckpointData(n=n, sizes=tuple(sizes), t=t, step=step, values=values)


def save_checkpoint(path, state):
    """Write atomically: temp file in the target directory, then rename."""
    blob = encode(
        state.phi.grid.n, state.phi.grid.points, state.t, state.step, state.phi.values
    )
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".hktf-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, grid=None):
    """Read and decode; with a grid, validate n and the per-axis sizes."""
    with open(path, "rb") as fh:
        data = decode(fh.read())
    if grid is not None:
        if data.n != grid.n:
            raise CheckpointError(f"checkpoint has n={data.n}, config has n={grid.n}")
        if data.sizes != grid.points:
            raise CheckpointError(
                f"checkpoint grid sizes {data.sizes} do not match config {grid.points}"
            )
    return data
