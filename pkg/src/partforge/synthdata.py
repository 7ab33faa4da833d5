"""Procedural synthetic shape corpus plus training-pair synthesis.

Shapes are parameterized arrangements of axis-aligned boxes and cylinders
with exact ground truth: per-part labels, per-part reflective-symmetry
flags, and guaranteed 26-connected unions. Everything is a pure function
of (inputs, seed).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import voxb
from .voxgrid import (
    PartTransform,
    VoxelGrid,
    apply_transform,
    symmetry_measure,
    trans_limit,
    SCALE_MIN,
    SCALE_MAX,
)

_SHAPE_SALT = 101
_ANCHOR_SALT = 102
_PERTURB_SALT = 103
_NOISE_SALT = 104
_AUG_SALT = 105


@dataclass(frozen=True)
class Category:
    """A shape category: fixed part labels plus which parts must touch."""

    name: str
    labels: tuple
    adjacency: tuple  # pairs of label names

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValueError("a category needs at least 2 parts")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("part labels must be unique")
        for a, b in self.adjacency:
            if a not in self.labels or b not in self.labels:
                raise ValueError(f"adjacency references unknown label ({a}, {b})")

    @property
    def num_parts(self):
        return len(self.labels)

    def label_index(self, label):
        return self.labels.index(label)


CATEGORIES = {
    "chair": Category(
        "chair",
        ("back", "seat", "leg", "armrest"),
        (("back", "seat"), ("seat", "leg"), ("seat", "armrest")),
    ),
    "plane": Category(
        "plane",
        ("body", "wing", "tail", "engine"),
        (("body", "wing"), ("body", "tail"), ("wing", "engine")),
    ),
    "lamp": Category(
        "lamp",
        ("base", "shade", "tube"),
        (("base", "tube"), ("tube", "shade")),
    ),
}


def get_category(name):
    try:
        return CATEGORIES[name]
    except KeyError:
        raise ValueError(f"unknown category {name!r}; known: {sorted(CATEGORIES)}")


@dataclass
class ShapeSample:
    """One training record: parts, symmetry flags, assembly ground truth."""

    parts: list  # K VoxelGrids, possibly empty
    sym_flags: tuple  # K booleans
    gt_transforms: list  # K PartTransforms
    anchor: int

    def nonempty_indices(self):
        return [i for i, p in enumerate(self.parts) if p.occupied_count() > 0]


def _box(mask, xr, yr, zr):
    mask[xr[0]:xr[1], yr[0]:yr[1], zr[0]:zr[1]] = True


def _mirror_range(rng_pair, r):
    a, b = rng_pair
    return (r - b, r - a)


def _cylinder_y(mask, r, cz, radius, yr, cx=None):
    """Vertical cylinder; cx defaults to the exact x-bisector for symmetry."""
    if cx is None:
        cx = (r - 1) / 2.0
    xs = np.arange(r, dtype=np.float64)
    d2 = (xs[:, None] - cx) ** 2 + (xs[None, :] - cz) ** 2
    disk = d2 <= radius * radius
    mask[:, yr[0]:yr[1], :] |= disk[:, None, :]


def _frac(r, lo, hi, rng):
    return int(round(r * rng.uniform(lo, hi)))


def _thick(r, f, minimum=2):
    return max(minimum, int(round(r * f)))


def _build_chair(rng, r):
    masks = {k: np.zeros((r,) * 3, dtype=bool) for k in CATEGORIES["chair"].labels}

    sx0 = _frac(r, 0.25, 0.3, rng)
    sz0 = _frac(r, 0.25, 0.3, rng)
    sy0 = _frac(r, 0.4, 0.45, rng)
    sth = _thick(r, 0.095)
    seat_x = (sx0, r - sx0)
    seat_z = (sz0, r - sz0)
    _box(masks["seat"], seat_x, (sy0, sy0 + sth), seat_z)

    bx0 = sx0 + rng.integers(0, max(1, r // 16) + 1)
    bth = _thick(r, 0.095)
    bh = _frac(r, 0.16, 0.24, rng)
    back_y = (sy0 + sth, sy0 + sth + bh)
    back_z = (sz0, sz0 + bth)
    _box(masks["back"], (bx0, r - bx0), back_y, back_z)

    swivel = rng.random() < 0.3
    leg_h = _frac(r, 0.14, 0.2, rng)
    ly0 = max(1, sy0 - leg_h)
    if swivel:
        col_radius = max(1.4, r * rng.uniform(0.05, 0.07))
        cz = (seat_z[0] + seat_z[1] - 1) / 2.0
        _cylinder_y(masks["leg"], r, cz, col_radius, (ly0, sy0))
        # asymmetric star of feet at the column base; redraw the star angle
        # until the leg is measurably asymmetric (the flag promises it)
        n_arms = int(rng.choice([3, 5]))
        arm_len = r * rng.uniform(0.15, 0.2)
        arm_w = max(1.2, r * 0.05)
        ft = _thick(r, 0.08)
        cx = (r - 1) / 2.0
        xs = np.arange(r, dtype=np.float64)
        px = xs[:, None] - cx
        pz = xs[None, :] - cz
        best = None
        for _ in range(20):
            theta0 = rng.uniform(0.0, 2 * np.pi)
            foot = np.zeros((r, r), dtype=bool)
            for j in range(n_arms):
                th = theta0 + 2 * np.pi * j / n_arms
                dx, dz = np.cos(th), np.sin(th)
                u = px * dx + pz * dz
                perp = np.abs(px * dz - pz * dx)
                foot |= (u >= 0) & (u <= arm_len) & (perp <= arm_w)
            leg = masks["leg"].copy()
            leg[:, ly0:ly0 + ft, :] |= foot[:, None, :]
            score = symmetry_measure(VoxelGrid(leg.astype(np.float32)))
            if best is None or score < best[0]:
                best = (score, leg)
            if score < 0.75:
                break
        masks["leg"] = best[1]
        leg_sym = False
    else:
        lw = _thick(r, 0.1)
        left_x = (sx0, sx0 + lw)
        right_x = _mirror_range(left_x, r)
        front_z = (sz0, sz0 + lw)
        rear_z = (r - sz0 - lw, r - sz0)
        for xr in (left_x, right_x):
            for zr in (front_z, rear_z):
                _box(masks["leg"], xr, (ly0, sy0), zr)
        leg_sym = True

    has_armrest = rng.random() < 0.65
    if has_armrest:
        aw = _thick(r, 0.07)
        ah = _frac(r, 0.1, 0.16, rng)
        az0 = sz0 + bth + 1
        az1 = min(r - sz0, az0 + _frac(r, 0.25, 0.4, rng))
        left_x = (sx0, sx0 + aw)
        arm_y = (sy0 + sth, sy0 + sth + ah)
        _box(masks["armrest"], left_x, arm_y, (az0, az1))
        _box(masks["armrest"], _mirror_range(left_x, r), arm_y, (az0, az1))

    sym = {"back": True, "seat": True, "leg": leg_sym, "armrest": True}
    return masks, sym


def _build_plane(rng, r):
    masks = {k: np.zeros((r,) * 3, dtype=bool) for k in CATEGORIES["plane"].labels}

    bx0 = _frac(r, 0.42, 0.45, rng)
    by0 = _frac(r, 0.42, 0.46, rng)
    bh = _thick(r, 0.12)
    bz0 = _frac(r, 0.18, 0.22, rng)
    body_x = (bx0, r - bx0)
    body_y = (by0, by0 + bh)
    body_z = (bz0, r - bz0)
    _box(masks["body"], body_x, body_y, body_z)

    wx0 = _frac(r, 0.14, 0.18, rng)
    wd = _thick(r, 0.16)
    wth = _thick(r, 0.07)
    wy0 = by0 + (bh - wth) // 2
    wz0 = bz0 + _frac(r, 0.1, 0.18, rng)
    wing_y = (wy0, wy0 + wth)
    wing_z = (wz0, wz0 + wd)
    _box(masks["wing"], (wx0, r - wx0), wing_y, wing_z)
    masks["wing"] &= ~masks["body"]  # wings cross the fuselage; body owns the core

    tx0 = _frac(r, 0.44, 0.46, rng)
    th = _frac(r, 0.1, 0.15, rng)
    td = _thick(r, 0.12)
    tail_y = (by0 + bh, by0 + bh + th)
    tail_z = (r - bz0 - td, r - bz0)
    _box(masks["tail"], (tx0, r - tx0), tail_y, tail_z)

    if rng.random() < 0.6:
        ew = _thick(r, 0.09)
        eh = _thick(r, 0.09)
        ex0 = bx0 - _frac(r, 0.08, 0.14, rng) - ew
        ex0 = max(wx0, ex0)
        left_x = (ex0, ex0 + ew)
        eng_y = (wy0 - eh, wy0)
        _box(masks["engine"], left_x, eng_y, wing_z)
        _box(masks["engine"], _mirror_range(left_x, r), eng_y, wing_z)

    sym = {k: True for k in masks}
    return masks, sym


def _build_lamp(rng, r):
    masks = {k: np.zeros((r,) * 3, dtype=bool) for k in CATEGORIES["lamp"].labels}
    c = (r - 1) / 2.0

    ly0 = _frac(r, 0.16, 0.2, rng)
    bt = _thick(r, 0.085)
    base_radius = r * rng.uniform(0.15, 0.2)
    _cylinder_y(masks["base"], r, c, base_radius, (ly0, ly0 + bt))

    tube_h = _frac(r, 0.22, 0.3, rng)
    tube_radius = max(1.1, r * rng.uniform(0.04, 0.06))
    tube_y = (ly0 + bt, ly0 + bt + tube_h)
    _cylinder_y(masks["tube"], r, c, tube_radius, tube_y)

    sh = _frac(r, 0.12, 0.18, rng)
    shade_radius = r * rng.uniform(0.14, 0.2)
    shade_y = (tube_y[1], tube_y[1] + sh)
    _cylinder_y(masks["shade"], r, c, shade_radius, shade_y)

    sym = {k: True for k in masks}
    return masks, sym


_BUILDERS = {"chair": _build_chair, "plane": _build_plane, "lamp": _build_lamp}


def make_shape(category, seed, resolution=32):
    """Emit one deterministic ShapeSample for the category at this seed."""
    if isinstance(category, str):
        category = get_category(category)
    rng = np.random.default_rng([_SHAPE_SALT, hash_name(category.name), seed])
    masks, sym = _BUILDERS[category.name](rng, resolution)

    overlap = np.zeros((resolution,) * 3, dtype=np.int16)
    for m in masks.values():
        overlap += m
    if overlap.max() > 1:
        raise RuntimeError(f"internal: overlapping parts in {category.name} seed {seed}")

    parts = [VoxelGrid(masks[k].astype(np.float32)) for k in category.labels]
    sym_flags = tuple(bool(sym[k]) for k in category.labels)
    anchor = draw_anchor(parts, seed)
    gt = [PartTransform.identity() for _ in category.labels]
    return ShapeSample(parts, sym_flags, gt, anchor)


def hash_name(name):
    """Small stable integer from a category name (keeps RNG streams apart)."""
    return sum(ord(c) * (31 ** i) for i, c in enumerate(name)) % (2 ** 31)


def draw_anchor(parts, seed):
    """Deterministic anchor draw, uniform over nonempty parts."""
    nonempty = [i for i, p in enumerate(parts) if p.occupied_count() > 0]
    if not nonempty:
        raise ValueError("cannot draw an anchor: all parts empty")
    rng = np.random.default_rng([_ANCHOR_SALT, seed])
    return int(rng.choice(nonempty))


def _draw_axis_params(rng, scale_range, trans_range, t_max):
    """Rejection-sample one axis until the inverse transform is in range."""
    while True:
        s = rng.uniform(*scale_range)
        t = rng.uniform(*trans_range)
        if SCALE_MIN <= 1.0 / s <= SCALE_MAX and abs(t / s) <= t_max:
            return s, t


def draw_perturbation(sample, seed, scale_range=(SCALE_MIN, SCALE_MAX), trans_range=None):
    """Draw the messing-up transforms and anchor without applying them.

    Returns (applied, gt, anchor) where applied[i] is the transform to
    mess up part i (None for the anchor) and gt[i] its exact inverse.
    Draws are rejection-sampled so every inverse stays inside the
    representable scale/translation ranges.
    """
    r = sample.parts[0].resolution
    t_max = trans_limit(r)
    if trans_range is None:
        trans_range = (-t_max, t_max)
    rng = np.random.default_rng([_PERTURB_SALT, seed])
    nonempty = sample.nonempty_indices()
    if not nonempty:
        raise ValueError("cannot perturb a sample with no nonempty parts")
    anchor = int(rng.choice(nonempty))

    applied = []
    gt = []
    for i in range(len(sample.parts)):
        if i == anchor:
            applied.append(None)
            gt.append(PartTransform.identity())
            continue
        sc, tr = [], []
        for _ in range(3):
            s, t = _draw_axis_params(rng, scale_range, trans_range, t_max)
            sc.append(s)
            tr.append(t)
        fwd = PartTransform(tuple(sc), tuple(tr))
        applied.append(fwd)
        gt.append(fwd.inverse())
    return applied, gt, anchor


def perturb(sample, seed, scale_range=(SCALE_MIN, SCALE_MAX), trans_range=None):
    """Mess up a sample's parts; the inverses become assembly ground truth.

    Every non-anchor part gets an independent per-axis uniform scale and
    translation. The anchor (drawn uniformly over nonempty parts) is left
    bit-exact. Returns (messed_parts, gt_transforms, anchor).
    """
    applied, gt, anchor = draw_perturbation(sample, seed, scale_range, trans_range)
    messed = [
        part.copy() if fwd is None else apply_transform(part, fwd)
        for part, fwd in zip(sample.parts, applied)
    ]
    return messed, gt, anchor


def add_noise(g, seed, flip_rate=0.02):
    """Jitter a fraction of voxels by uniform noise in [-0.3, 0.3]."""
    if not (0.0 <= flip_rate < 0.5):
        raise ValueError(f"flip_rate must be in [0, 0.5), got {flip_rate}")
    if flip_rate == 0.0:
        return g.copy()
    rng = np.random.default_rng([_NOISE_SALT, seed])
    shape = g.values.shape
    hit = rng.random(shape) < flip_rate
    jitter = rng.uniform(-0.3, 0.3, size=shape).astype(np.float32)
    out = np.clip(g.values + hit * jitter, 0.0, 1.0)
    return VoxelGrid(out)


def augment_transform(seed, resolution):
    """One uniform augmentation draw: scale in [0.5,1.5], translation in [-T,T]."""
    t_max = trans_limit(resolution)
    rng = np.random.default_rng([_AUG_SALT, seed])
    sc = tuple(rng.uniform(SCALE_MIN, SCALE_MAX, size=3))
    tr = tuple(rng.uniform(-t_max, t_max, size=3))
    return PartTransform(sc, tr)


def augment_part(g, seed):
    """Randomly scale and translate one part volume (training augmentation)."""
    return apply_transform(g, augment_transform(seed, g.resolution))


@dataclass
class Corpus:
    """A loaded dataset split."""

    category: Category
    resolution: int
    split: str
    samples: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def part_volumes(self, label):
        """Nonempty volumes for one part label, with their symmetry flags."""
        k = self.category.label_index(label)
        out = []
        for sample in self.samples:
            if sample.parts[k].occupied_count() > 0:
                out.append((sample.parts[k], sample.sym_flags[k]))
        return out


def labeled_grid(sample, category):
    """Pack disjoint parts into one labeled grid (part k gets label k+1)."""
    r = sample.parts[0].resolution
    labels = np.zeros((r,) * 3, dtype=np.uint8)
    for k, part in enumerate(sample.parts):
        labels[part.values >= 0.5] = k + 1
    from .voxgrid import LabeledGrid

    return LabeledGrid(labels, category.labels)


def sample_from_labeled(grid, sym_flags, seed):
    """Rebuild a ShapeSample from a labeled grid plus manifest metadata."""
    parts = [grid.part(k + 1) for k in range(grid.num_parts)]
    ident = [PartTransform.identity() for _ in parts]
    return ShapeSample(parts, tuple(bool(f) for f in sym_flags), ident, draw_anchor(parts, seed))


def _entry_seed(base_seed, split, index, n_train):
    offset = index if split == "train" else n_train + index
    return base_seed * 1_000_000 + offset


def build_corpus(category, out_dir, n_train=512, n_test=128, seed=0, resolution=32):
    """Write a dataset: per-split manifest.json plus shapes/NNNN.voxb files."""
    if isinstance(category, str):
        category = get_category(category)
    out_dir = Path(out_dir)
    for split, count in (("train", n_train), ("test", n_test)):
        split_dir = out_dir / split
        shapes_dir = split_dir / "shapes"
        shapes_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for i in range(count):
            s = _entry_seed(seed, split, i, n_train)
            sample = make_shape(category, s, resolution)
            rel = f"shapes/{i:04d}.voxb"
            try:
                voxb.write_voxb(labeled_grid(sample, category), split_dir / rel)
            except OSError as exc:
                raise OSError(f"failed writing {split_dir / rel}: {exc}") from exc
            entries.append({
                "file": rel,
                "sym_flags": [bool(f) for f in sample.sym_flags],
                "seed": s,
            })
        manifest = {
            "category": category.name,
            "resolution": resolution,
            "labels": list(category.labels),
            "entries": entries,
            "split": split,
        }
        with open(split_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return out_dir


def load_corpus(split_dir):
    """Load one split directory written by build_corpus."""
    split_dir = Path(split_dir)
    manifest_path = split_dir / "manifest.json"
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise OSError(f"failed reading {manifest_path}: {exc}") from exc
    category = get_category(manifest["category"])
    if tuple(manifest["labels"]) != category.labels:
        raise ValueError(f"manifest labels {manifest['labels']} do not match {category.name}")
    corpus = Corpus(category, int(manifest["resolution"]), manifest["split"])
    for entry in manifest["entries"]:
        grid = voxb.read_voxb(split_dir / entry["file"])
        corpus.samples.append(sample_from_labeled(grid, entry["sym_flags"], entry["seed"]))
        corpus.seeds.append(entry["seed"])
    return corpus
