"""Voxel-grid geometry core: reflection, IoU, transforms, connectivity.

Everything in here is a pure function over immutable inputs. Grids use
index order (x, y, z) with x = left-right, y = up, z = front-back.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SCALE_MIN = 0.5
SCALE_MAX = 1.5

_AXES = {"x": 0, "y": 1, "z": 2}


def trans_limit(resolution):
    """Translation bound T in voxels: +-20 at 64^3, scaled to the grid."""
    return resolution * 20.0 / 64.0


class VoxelGrid:
    """Cubic real-valued occupancy volume with values in [0, 1]."""

    __slots__ = ("values",)

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 3 or len(set(values.shape)) != 1:
            raise ValueError(f"grid must be cubic, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("grid contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("grid values must lie in [0, 1]")
        self.values = values

    @property
    def resolution(self):
        return self.values.shape[0]

    @classmethod
    def empty(cls, resolution):
        return cls(np.zeros((resolution,) * 3, dtype=np.float32))

    def occupied_count(self, tau=0.5):
        return int((self.values >= tau).sum())

    def copy(self):
        return VoxelGrid(self.values.copy())


class LabeledGrid:
    """Cubic grid of small integer labels: 0 = empty, k in 1..K = part k."""

    __slots__ = ("labels", "label_names")

    def __init__(self, labels, label_names):
        labels = np.asarray(labels, dtype=np.uint8)
        if labels.ndim != 3 or len(set(labels.shape)) != 1:
            raise ValueError(f"label grid must be cubic, got shape {labels.shape}")
        label_names = tuple(label_names)
        if labels.max(initial=0) > len(label_names):
            raise ValueError("label id exceeds declared part count")
        self.labels = labels
        self.label_names = label_names

    @property
    def resolution(self):
        return self.labels.shape[0]

    @property
    def num_parts(self):
        return len(self.label_names)

    def occupancy(self):
        """Derived occupancy grid: 1 wherever any label is present."""
        return VoxelGrid((self.labels > 0).astype(np.float32))

    def part(self, k):
        """Occupancy of part k (1-based label id)."""
        return VoxelGrid((self.labels == k).astype(np.float32))


@dataclass(frozen=True)
class PartTransform:
    """Anisotropic scale about the grid center followed by a translation.

    scale components lie in [0.5, 1.5]; translation components in voxels
    within [-T, T] where T = trans_limit(resolution).
    """

    scale: tuple
    translation: tuple

    def __post_init__(self):
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))
        if len(self.scale) != 3 or len(self.translation) != 3:
            raise ValueError("scale and translation must have 3 components")

    @classmethod
    def identity(cls):
        return cls((1.0, 1.0, 1.0), (0.0, 0.0, 0.0))

    def is_identity(self, tol=0.0):
        return all(abs(s - 1.0) <= tol for s in self.scale) and all(
            abs(t) <= tol for t in self.translation
        )

    def validate(self, resolution):
        t_max = trans_limit(resolution)
        for s in self.scale:
            if not (SCALE_MIN <= s <= SCALE_MAX):
                raise ValueError(f"scale {s} outside [{SCALE_MIN}, {SCALE_MAX}]")
        for t in self.translation:
            if not (-t_max <= t <= t_max):
                raise ValueError(f"translation {t} outside [{-t_max}, {t_max}]")

    def inverse(self):
        """Exact inverse: scale 1/s, translation -t/s (about the same center)."""
        inv_s = tuple(1.0 / s for s in self.scale)
        inv_t = tuple(-t / s for t, s in zip(self.translation, self.scale))
        return PartTransform(inv_s, inv_t)


def normalize_transform(t, resolution):
    """Encode a PartTransform as a 6-vector in [0,1]: (sx,sy,sz,tx,ty,tz)."""
    t_max = trans_limit(resolution)
    s = [(v - SCALE_MIN) / (SCALE_MAX - SCALE_MIN) for v in t.scale]
    tr = [(v + t_max) / (2.0 * t_max) for v in t.translation]
    return np.array(s + tr, dtype=np.float64)


def denormalize_transform(vec, resolution):
    """Inverse of normalize_transform."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (6,):
        raise ValueError(f"normalized transform must have 6 entries, got {vec.shape}")
    t_max = trans_limit(resolution)
    scale = tuple(SCALE_MIN + v * (SCALE_MAX - SCALE_MIN) for v in vec[:3])
    trans = tuple(-t_max + v * 2.0 * t_max for v in vec[3:])
    return PartTransform(scale, trans)


def reflect(g, axis="x"):
    """Mirror the grid about the bisector plane of the chosen axis.

    Index i maps to R-1-i, so the plane sits at coordinate (R-1)/2
    (between voxels for even R). Exact on indices; an involution.
    """
    ax = _AXES[axis] if isinstance(axis, str) else int(axis)
    return VoxelGrid(np.flip(g.values, axis=ax).copy())


def binarize(g, tau=0.5):
    """Threshold at tau; a value exactly at tau counts as occupied."""
    return VoxelGrid((g.values >= tau).astype(np.float32))


def iou(a, b, tau=0.5):
    """Intersection-over-union of the binarized grids.

    An empty union counts as perfect agreement (1.0).
    """
    if a.resolution != b.resolution:
        raise ValueError(f"resolution mismatch: {a.resolution} vs {b.resolution}")
    return _iou_masks(a.values >= tau, b.values >= tau)


def _iou_masks(ma, mb):
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(ma, mb).sum()
    return float(inter) / float(union)


def symmetry_measure(g):
    """IoU between the reflected left half and the right half of the grid.

    The reflection plane is the fixed x-bisector at (R-1)/2. Both halves
    are compared in the right-half index frame; 1.0 means perfectly
    mirror-symmetric, and a one-sided grid scores 0.0.
    """
    r = g.resolution
    lo = r - r // 2  # start of the right half; excludes the center voxel for odd R
    right = g.values[lo:] >= 0.5
    left_reflected = np.flip(g.values, axis=0)[lo:] >= 0.5
    return _iou_masks(left_reflected, right)


def apply_transform(g, t):
    """Scale about the grid center, then translate, resampling trilinearly.

    Out-of-bounds source values are treated as 0 and the result is
    clamped back to [0, 1]. Binarization is left to the caller.
    """
    r = g.resolution
    t.validate(r)
    if t.is_identity():
        return g.copy()
    c = (r - 1) / 2.0
    s = np.array(t.scale, dtype=np.float64)
    tr = np.array(t.translation, dtype=np.float64)
    # output[o] = input((o - c - t) / s + c); affine_transform wants
    # input_coord = matrix @ o + offset. A one-voxel zero shell makes the
    # boundary interpolate against 0 values instead of snapping to cval.
    padded = np.pad(g.values, 1)
    matrix = np.diag(1.0 / s)
    offset = c - (c + tr) / s + 1.0
    out = ndimage.affine_transform(
        padded, matrix, offset=offset, order=1, mode="constant", cval=0.0,
        prefilter=False, output_shape=(r, r, r),
    )
    return VoxelGrid(np.clip(out, 0.0, 1.0))


_STRUCTS = {
    6: ndimage.generate_binary_structure(3, 1),
    26: np.ones((3, 3, 3), dtype=bool),
}


def connected_components(g, connectivity=26):
    """Number of connected occupied components after binarizing at 0.5."""
    if connectivity not in _STRUCTS:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    mask = g.values >= 0.5
    _, count = ndimage.label(mask, structure=_STRUCTS[connectivity])
    return int(count)


def is_connected(g, connectivity=26):
    """True when the occupied set forms at most one component."""
    return connected_components(g, connectivity) <= 1
