"""VOXB, the labeled-volume container format.

Layout (little-endian):
    magic   "VOXB" (4 bytes)
    version u16 = 1
    resolution u16
    K       u16 (number of part labels)
    K null-terminated UTF-8 label names
    R^3 bytes, u8 each: 0 = empty, k = part k, in x-major order
    (index = x*R*R + y*R + z, matching C-order flattening of [x][y][z])
"""

import struct

import numpy as np

from .voxgrid import LabeledGrid

MAGIC = b"VOXB"
VERSION = 1


class VoxbError(ValueError):
    pass


def encode(grid):
    """Serialize a LabeledGrid to VOXB bytes."""
    r = grid.resolution
    k = grid.num_parts
    if r > 0xFFFF or k > 0xFFFF:
        raise VoxbError("resolution/part count exceed u16 range")
    head = MAGIC + struct.pack("<HHH", VERSION, r, k)
    names = b""
    for name in grid.label_names:
        raw = name.encode("utf-8")
        if b"\x00" in raw:
            raise VoxbError(f"label name {name!r} contains NUL")
        names += raw + b"\x00"
    return head + names + grid.labels.astype(np.uint8).tobytes(order="C")


def decode(data):
    """Parse VOXB bytes into a LabeledGrid."""
    if data[:4] != MAGIC:
        raise VoxbError("bad magic, not a VOXB payload")
    version, r, k = struct.unpack_from("<HHH", data, 4)
    if version != VERSION:
        raise VoxbError(f"unsupported VOXB version {version}")
    pos = 10
    names = []
    for _ in range(k):
        end = data.index(b"\x00", pos)
        names.append(data[pos:end].decode("utf-8"))
        pos = end + 1
    n = r * r * r
    body = data[pos:pos + n]
    if len(body) != n:
        raise VoxbError(f"truncated voxel payload: expected {n} bytes, got {len(body)}")
    labels = np.frombuffer(body, dtype=np.uint8).reshape((r, r, r))
    return LabeledGrid(labels.copy(), names)


def write_voxb(grid, path):
    with open(path, "wb") as fh:
        fh.write(encode(grid))


def read_voxb(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
