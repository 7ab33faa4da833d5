"""Full generation pipeline and structured latent-space operations.

A LatentCode is the concatenation of K per-part sections; section k is
decoded only by part generator k, so edits to one section can never leak
into another part's pre-assembly volume.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import voxb
from .assembler import assemble, load_assembler, predict_transforms
from .partgen import load_generator
from .seeds import derive_seed
from .synthdata import get_category
from .voxgrid import PartTransform, VoxelGrid

EMPTY_MIN_VOXELS = 8  # binarized voxels below this count as an absent part


class DegenerateSample(RuntimeError):
    """All decoded parts were empty; there is nothing to anchor."""


@dataclass
class GeneratedShape:
    code: np.ndarray          # length K*d
    parts: list               # K pre-assembly VoxelGrids
    transforms: list          # K PartTransforms (anchor identity)
    assembled: object         # LabeledGrid
    anchor: int

    def nonempty_indices(self, min_voxels=EMPTY_MIN_VOXELS):
        return [i for i, p in enumerate(self.parts)
                if p.occupied_count() >= min_voxels]


class ModelBundle:
    """Frozen per-part decoders plus the assembler, loaded once."""

    def __init__(self, category, resolution, latent_dim, decoders, assembler_payload,
                 assembler_net, generator_payloads):
        self.category = category
        self.resolution = resolution
        self.latent_dim = latent_dim
        self.decoders = decoders
        self.assembler = (assembler_payload, assembler_net)
        self.generator_payloads = generator_payloads

    @property
    def labels(self):
        return self.category.labels

    @property
    def num_parts(self):
        return self.category.num_parts

    @property
    def code_length(self):
        return self.num_parts * self.latent_dim

    @classmethod
    def load(cls, generator_sources, assembler_source):
        """generator_sources: mapping of part label to checkpoint path/payload."""
        payloads = {}
        decoders = {}
        for label, source in generator_sources.items():
            payload, _, dec = load_generator(source)
            if payload["meta"]["part_label"] != label:
                raise ValueError(
                    f"checkpoint for {label!r} trained on "
                    f"{payload['meta']['part_label']!r}")
            payloads[label] = payload
            decoders[label] = dec
        asm_payload, asm_net = load_assembler(assembler_source)
        category = get_category(asm_payload["meta"]["category"])
        missing = [lbl for lbl in category.labels if lbl not in decoders]
        if missing:
            raise ValueError(f"missing part generators for {missing}")
        r = asm_payload["meta"]["resolution"]
        d = payloads[category.labels[0]]["meta"]["latent_dim"]
        for label in category.labels:
            meta = payloads[label]["meta"]
            if meta["resolution"] != r or meta["latent_dim"] != d:
                raise ValueError(f"generator {label!r} disagrees on resolution/latent size")
        ordered_dec = [decoders[lbl] for lbl in category.labels]
        ordered_pay = [payloads[lbl] for lbl in category.labels]
        return cls(category, r, d, ordered_dec, asm_payload, asm_net, ordered_pay)

    def split_code(self, code):
        code = np.asarray(code, dtype=np.float32)
        if code.shape != (self.code_length,):
            raise ValueError(f"code must have length {self.code_length}, got {code.shape}")
        return code.reshape(self.num_parts, self.latent_dim)

    def decode_code(self, code):
        """Decode each section with its own part generator."""
        sections = self.split_code(code)
        parts = []
        for k, dec in enumerate(self.decoders):
            with torch.no_grad():
                vol = dec(torch.from_numpy(sections[k])[None])[0, 0].numpy()
            parts.append(VoxelGrid(np.clip(vol, 0.0, 1.0)))
        return parts


def _choose_anchor(parts, seed=None, min_voxels=EMPTY_MIN_VOXELS):
    candidates = [i for i, p in enumerate(parts) if p.occupied_count() >= min_voxels]
    if not candidates:
        raise DegenerateSample("degenerate sample: all decoded parts are empty")
    if seed is None:
        # deterministic rule used where no RNG is available: largest part wins
        return max(candidates, key=lambda i: parts[i].occupied_count())
    rng = np.random.default_rng(derive_seed(seed, "anchor"))
    return int(rng.choice(candidates))


def _finish(bundle, code, parts, anchor):
    transforms = predict_transforms(bundle.assembler, parts, anchor)
    assembled = assemble(parts, transforms, bundle.labels)
    return GeneratedShape(np.asarray(code, np.float32), parts, transforms,
                          assembled, anchor)


def sample_shape(bundle, seed, anchor=None):
    """Draw a code from the prior, decode parts, pick an anchor, assemble."""
    rng = np.random.default_rng(derive_seed(seed, "code"))
    code = rng.standard_normal(bundle.code_length).astype(np.float32)
    parts = bundle.decode_code(code)
    if anchor is None:
        anchor = _choose_anchor(parts, seed=seed)
    else:
        if not (0 <= anchor < bundle.num_parts):
            raise ValueError(f"anchor {anchor} out of range")
        if parts[anchor].occupied_count() < EMPTY_MIN_VOXELS:
            raise ValueError(f"requested anchor {bundle.labels[anchor]!r} is empty")
    return _finish(bundle, code, parts, anchor)


def interpolate(bundle, code_a, code_b, steps):
    """Linear latent blends; endpoints decode A and B bit-exactly."""
    code_a = np.asarray(code_a, np.float32)
    code_b = np.asarray(code_b, np.float32)
    if code_a.shape != code_b.shape:
        raise ValueError("codes must have equal length")
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    out = []
    for i in range(steps):
        t = i / (steps - 1)
        code = ((1.0 - t) * code_a + t * code_b).astype(np.float32)
        parts = bundle.decode_code(code)
        out.append(_finish(bundle, code, parts, _choose_anchor(parts)))
    return out


def arithmetic(bundle, codes, coeffs):
    """Decode a signed combination of latent codes."""
    if len(codes) != len(coeffs):
        raise ValueError("codes/coeffs length mismatch")
    acc = np.zeros(bundle.code_length, dtype=np.float32)
    for code, w in zip(codes, coeffs):
        code = np.asarray(code, np.float32)
        if code.shape != acc.shape:
            raise ValueError("codes must all match the bundle's latent length")
        acc += np.float32(w) * code
    parts = bundle.decode_code(acc)
    return _finish(bundle, acc, parts, _choose_anchor(parts))


def crossover(bundle, code_a, code_b, take_from_b):
    """Copy whole latent sections from B into A and decode the child."""
    sections_a = bundle.split_code(code_a).copy()
    sections_b = bundle.split_code(code_b)
    for k in take_from_b:
        if not (0 <= k < bundle.num_parts):
            raise ValueError(f"part index {k} out of range")
        sections_a[k] = sections_b[k]
    code = sections_a.reshape(-1)
    parts = bundle.decode_code(code)
    return _finish(bundle, code, parts, _choose_anchor(parts))


def save_generated(shape, path_base, seed=None):
    """Write NNNN.voxb plus the JSON sidecar (code, transforms, anchor, seed)."""
    path_base = Path(path_base)
    voxb.write_voxb(shape.assembled, path_base.with_suffix(".voxb"))
    sidecar = {
        "code": [float(v) for v in shape.code],
        "transforms": [
            {"scale": list(t.scale), "translate": list(t.translation)}
            for t in shape.transforms
        ],
        "anchor": int(shape.anchor),
        "seed": seed,
    }
    with open(path_base.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_generated(bundle, path_base):
    """Rebuild a GeneratedShape from a .voxb/.json pair (re-decodes parts)."""
    path_base = Path(path_base)
    with open(path_base.with_suffix(".json")) as fh:
        sidecar = json.load(fh)
    code = np.array(sidecar["code"], dtype=np.float32)
    parts = bundle.decode_code(code)
    transforms = [PartTransform(tuple(t["scale"]), tuple(t["translate"]))
                  for t in sidecar["transforms"]]
    assembled = voxb.read_voxb(path_base.with_suffix(".voxb"))
    return GeneratedShape(code, parts, transforms, assembled, int(sidecar["anchor"]))
