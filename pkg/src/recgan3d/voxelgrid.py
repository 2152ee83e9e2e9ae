"""Occupancy grids, thresholding, IoU/CE metrics and the ``.vxg`` file format.

Grids are indexed ``values[x, y, z]``.  On disk the payload is linearized with
x varying fastest, then y, then z.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

BINARY = "binary"
PROBABILITY = "probability"

MAGIC = b"VXGR"
VERSION = 1
ENC_BITS = 0
ENC_FLOAT32 = 1
_HEADER = struct.Struct("<4sBBHHH")

DEFAULT_EPS = 1e-7


class GridKindError(ValueError):
    pass


class GridShapeError(ValueError):
    pass


class GridFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class OccupancyGrid:
    """Immutable cubic (or box) voxel grid.

    Binary grids hold ``uint8`` values in {0, 1}; probability grids hold
    ``float32`` values in [0, 1].
    """

    __slots__ = ("_values", "kind")

    def __init__(self, values, kind=None):
        arr = np.asarray(values)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise GridShapeError(f"grid must be 3-D with positive dims, got {arr.shape}")
        if kind is None:
            kind = BINARY if arr.dtype == np.bool_ or np.issubdtype(arr.dtype, np.integer) else PROBABILITY
        if kind == BINARY:
            if not np.isin(arr, (0, 1)).all():
                raise GridKindError("binary grid must contain only 0 and 1")
            arr = arr.astype(np.uint8)
        elif kind == PROBABILITY:
            arr = arr.astype(np.float32)
            if not (np.all(arr >= 0.0) and np.all(arr <= 1.0)):
                raise GridKindError("probability grid values must lie in [0, 1]")
        else:
            raise GridKindError(f"unknown grid kind {kind!r}")
        if arr is values or not arr.flags.owndata:
            arr = arr.copy()
        arr.flags.writeable = False
        self._values = arr
        self.kind = kind

    @classmethod
    def empty(cls, n, kind=BINARY):
        dtype = np.uint8 if kind == BINARY else np.float32
        return cls(np.zeros((n, n, n), dtype=dtype), kind)

    @property
    def values(self):
        return self._values

    @property
    def dims(self):
        return self._values.shape

    @property
    def resolution(self):
        return self._values.shape[0]

    def count(self):
        """Number of occupied voxels (binary) or voxels with nonzero probability."""
        return int(np.count_nonzero(self._values))

    def as_probability(self):
        if self.kind == PROBABILITY:
            return self
        return OccupancyGrid(self._values.astype(np.float32), PROBABILITY)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self._values, other._values)

    def __repr__(self):
        return f"OccupancyGrid(dims={self.dims}, kind={self.kind}, nonzero={self.count()})"


@dataclass(frozen=True)
class MetricReport:
    iou: float
    ce: float
    voxel_count: int


def _require_kind(grid, kind):
    if grid.kind != kind:
        raise GridKindError(f"expected a {kind} grid, got {grid.kind}")


def _require_same_dims(a, b):
    if a.dims != b.dims:
        raise GridShapeError(f"dimension mismatch: {a.dims} vs {b.dims}")


def threshold(grid, p=0.5):
    _require_kind(grid, PROBABILITY)
    if not 0.0 < p < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {p}")
    return OccupancyGrid((grid.values > p).astype(np.uint8), BINARY)


def _binarized(grid, p):
    return grid.values.astype(bool) if grid.kind == BINARY else grid.values > p


def iou(pred, target, p=0.5):
    """Intersection over union of ``pred > p`` against a binary target.

    A binary ``pred`` is used as is.  Two empty sets give 1.0.
    """
    _require_same_dims(pred, target)
    _require_kind(target, BINARY)
    a = _binarized(pred, p)
    b = target.values.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def cross_entropy(pred, target, eps=DEFAULT_EPS):
    """Mean negated log-likelihood of ``target`` under ``pred`` (lower is better)."""
    _require_same_dims(pred, target)
    if not 0.0 < eps < 0.5:
        raise ValueError(f"eps must lie in (0, 0.5), got {eps}")
    q = np.clip(pred.values.astype(np.float64), eps, 1.0 - eps)
    y = target.values.astype(np.float64)
    ll = y * np.log(q) + (1.0 - y) * np.log(1.0 - q)
    return float(-ll.mean())


def evaluate_pair(pred, target, p=0.5, eps=DEFAULT_EPS):
    return MetricReport(iou(pred, target, p), cross_entropy(pred.as_probability(), target, eps), target.values.size)


def dilate(grid, radius):
    """Grow the occupied set by a Chebyshev (cube-neighbourhood) radius."""
    _require_kind(grid, BINARY)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0 or grid.count() == 0:
        return grid
    size = 2 * radius + 1
    out = ndimage.maximum_filter(grid.values, size=size, mode="constant", cval=0)
    return OccupancyGrid(out, BINARY)


# -- file format -----------------------------------------------------------------


def _linearize(values):
    return np.ravel(values, order="F")


def encode_grid(grid):
    nx, ny, nz = grid.dims
    if max(grid.dims) > 0xFFFF:
        raise GridShapeError("dims must fit in 16 bits")
    if grid.kind == BINARY:
        payload = np.packbits(_linearize(grid.values), bitorder="little").tobytes()
        enc = ENC_BITS
    else:
        payload = _linearize(grid.values).astype("<f4").tobytes()
        enc = ENC_FLOAT32
    return _HEADER.pack(MAGIC, VERSION, enc, nx, ny, nz) + payload


def decode_grid(data):
    if len(data) < _HEADER.size:
        raise GridFormatError("truncated header", len(data))
    magic, version, enc, nx, ny, nz = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise GridFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise GridFormatError(f"unsupported version {version}", 4)
    if 0 in (nx, ny, nz):
        raise GridFormatError("zero dimension", 6)
    n = nx * ny * nz
    if enc == ENC_BITS:
        expected = (n + 7) // 8
    elif enc == ENC_FLOAT32:
        expected = 4 * n
    else:
        raise GridFormatError(f"unknown encoding {enc}", 5)
    body = data[_HEADER.size:]
    if len(body) < expected:
        raise GridFormatError(f"truncated payload: expected {expected} bytes, found {len(body)}", len(data))
    if len(body) > expected:
        raise GridFormatError("trailing bytes after payload", _HEADER.size + expected)
    if enc == ENC_BITS:
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n, bitorder="little")
        return OccupancyGrid(bits.reshape((nx, ny, nz), order="F"), BINARY)
    vals = np.frombuffer(body, dtype="<f4").astype(np.float32)
    return OccupancyGrid(vals.reshape((nx, ny, nz), order="F"), PROBABILITY)


def save_grid(grid, path):
    Path(path).write_bytes(encode_grid(grid))


def load_grid(path):
    return decode_grid(Path(path).read_bytes())
