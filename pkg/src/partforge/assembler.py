"""Part assembly: anchor encoding, transform regression, labeled assembly.

The assembler sees all K part volumes stacked channelwise, with the
anchor part's occupied voxels written as -1 to stand out against the
positive occupancies of the free parts. Training pairs come from
perturb-and-invert synthesis with value noise injected.
"""

import csv
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
from torch import optim

from .models import AssemblerNet, load_checkpoint, save_checkpoint, stage_channels
from .partgen import TrainingDivergence, TrainResult, write_curves
from .seeds import derive_seed
from .synthdata import add_noise, perturb
from .voxgrid import (
    LabeledGrid,
    PartTransform,
    VoxelGrid,
    apply_transform,
    denormalize_transform,
    iou,
    normalize_transform,
)


def anchor_encode(parts, anchor):
    """Stack parts [K, R, R, R] with the anchor binarized and negated.

    Free channels keep their soft values; the anchor channel holds -1 at
    voxels whose occupancy was >= 0.5 and 0 elsewhere.
    """
    k = len(parts)
    if not (0 <= anchor < k):
        raise ValueError(f"anchor {anchor} out of range for {k} parts")
    arrays = [p.values if isinstance(p, VoxelGrid) else np.asarray(p, np.float32)
              for p in parts]
    anchor_mask = arrays[anchor] >= 0.5
    if not anchor_mask.any():
        raise ValueError(f"anchor part {anchor} is empty; re-draw the anchor")
    out = np.stack(arrays).astype(np.float32)
    out[anchor] = -anchor_mask.astype(np.float32)
    return out


def _encode_batch(volumes, anchors, mode):
    """volumes [B, K, R, R, R] float tensor -> (input tensor, onehot or None)."""
    b, k = volumes.shape[:2]
    if mode == "one-hot":
        return volumes, torch.eye(k, dtype=volumes.dtype)[anchors]
    out = volumes.clone()
    rows = torch.arange(b)
    out[rows, anchors] = -(volumes[rows, anchors] >= 0.5).to(volumes.dtype)
    return out, None


def predict_transforms(source, parts, anchor):
    """Regress one PartTransform per part; the anchor comes back identity."""
    payload, net = load_assembler(source)
    r = payload["meta"]["resolution"]
    arrays = [p.values if isinstance(p, VoxelGrid) else np.asarray(p, np.float32)
              for p in parts]
    anchor_mask = arrays[anchor] >= 0.5
    if not anchor_mask.any():
        raise ValueError(f"anchor part {anchor} is empty; re-draw the anchor")
    vols = torch.from_numpy(np.stack(arrays).astype(np.float32))[None]
    x, onehot = _encode_batch(vols, torch.tensor([anchor]), net.mode)
    with torch.no_grad():
        params = net(x, onehot)[0].numpy()
    out = [denormalize_transform(params[i].astype(np.float64), r)
           for i in range(len(parts))]
    out[anchor] = PartTransform.identity()
    return out


def assemble(parts, transforms, labels):
    """Apply per-part transforms, binarize, and write labels in part order.

    Where transformed parts overlap, the higher part index wins.
    """
    if len(parts) != len(transforms):
        raise ValueError("parts/transforms length mismatch")
    r = parts[0].resolution
    out = np.zeros((r,) * 3, dtype=np.uint8)
    for k, (part, t) in enumerate(zip(parts, transforms)):
        moved = part if t.is_identity() else apply_transform(part, t)
        out[moved.values >= 0.5] = k + 1
    return LabeledGrid(out, labels)


def _build_pairs(corpus, cfg, pairs_per_shape, noise_rate):
    """Precompute perturb-and-invert training pairs as packed tensors."""
    k = corpus.category.num_parts
    inputs, targets, anchors, masks = [], [], [], []
    r = corpus.resolution
    for i, sample in enumerate(corpus.samples):
        for j in range(pairs_per_shape):
            seed = derive_seed(cfg.seed, "pair", i, j)
            messed, gt, anchor = perturb(sample, seed)
            vols = np.empty((k, r, r, r), dtype=np.float16)
            for p, m in enumerate(messed):
                noisy = add_noise(m, derive_seed(seed, "noise", p), noise_rate)
                vols[p] = noisy.values
            inputs.append(vols)
            targets.append(np.stack([normalize_transform(t, r) for t in gt]))
            anchors.append(anchor)
            masks.append([p != anchor and sample.parts[p].occupied_count() > 0
                          for p in range(k)])
    return (
        torch.from_numpy(np.stack(inputs)),
        torch.from_numpy(np.stack(targets).astype(np.float32)),
        torch.tensor(anchors),
        torch.tensor(masks, dtype=torch.bool),
    )


def train_assembler(corpus, cfg, mode="neg-anchor", out_dir=None,
                    pairs_per_shape=2, noise_rate=0.02):
    """Fit the assembler on messed-up/ground-truth pairs from the corpus.

    Loss is MSE between predicted and ground-truth normalized parameters,
    masked to non-anchor nonempty parts.
    """
    if mode not in AssemblerNet.MODES:
        raise ValueError(f"unknown assembler mode {mode!r}")
    k = corpus.category.num_parts
    r = corpus.resolution
    inputs, targets, anchors, masks = _build_pairs(corpus, cfg, pairs_per_shape, noise_rate)
    n = inputs.shape[0]

    torch.manual_seed(derive_seed(cfg.seed, "init", mode))
    net = AssemblerNet(r, k, cfg.base_channels, mode)
    opt = optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999))

    curves = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "order", epoch)).permutation(n)
        total = 0.0
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idxs = order[lo:lo + cfg.batch_size]
            vols = inputs[idxs].to(torch.float32)
            x, onehot = _encode_batch(vols, anchors[idxs], mode)
            pred = net(x, onehot)
            m = masks[idxs].unsqueeze(-1).to(torch.float32)
            denom = m.sum() * 6
            loss = (((pred - targets[idxs]) ** 2) * m).sum() / denom.clamp_min(1.0)
            if not np.isfinite(loss.item()):
                raise TrainingDivergence(f"assembler loss diverged (mode {mode})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        curves.append({"epoch": epoch, "phase": f"assembler-{mode}", "recon": "",
                       "kl": "", "ref": "", "adv_d": "", "adv_g": "", "gp": "",
                       "total": total / batches})

    meta = {
        "resolution": r,
        "num_parts": k,
        "base_channels": cfg.base_channels,
        "channels": stage_channels(r, cfg.base_channels),
        "mode": mode,
        "labels": list(corpus.category.labels),
        "category": corpus.category.name,
        "train_config": asdict(cfg),
        "n_pairs": n,
    }
    payload = {"version": 1, "kind": "assembler", "meta": meta,
               "state_dict": net.state_dict()}
    result = TrainResult(payload, curves)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out_dir / f"assembler_{mode}.pt"
        save_checkpoint(result.checkpoint_path, "assembler", net.state_dict(), meta)
        result.curves_path = out_dir / f"assembler_{mode}_losses.csv"
        write_curves(result.curves_path, curves)
    return result


def load_assembler(source):
    """Rebuild (payload, net) in eval mode from a checkpoint or payload."""
    if isinstance(source, tuple):
        return source
    payload = source if isinstance(source, dict) else load_checkpoint(source, "assembler")
    meta = payload["meta"]
    net = AssemblerNet(meta["resolution"], meta["num_parts"], meta["base_channels"],
                       meta["mode"])
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return payload, net


def union_occupancy(sample):
    acc = np.zeros_like(sample.parts[0].values)
    for p in sample.parts:
        acc = np.maximum(acc, p.values)
    return VoxelGrid(acc)


def eval_assembly(source, samples, labels, seed=0, use_identity=False):
    """Mean IoU between re-assembled perturbed shapes and their originals."""
    payload, net = load_assembler(source)
    scores = []
    for i, sample in enumerate(samples):
        messed, _, anchor = perturb(sample, derive_seed(seed, "eval", i))
        if use_identity:
            transforms = [PartTransform.identity() for _ in messed]
        else:
            transforms = predict_transforms((payload, net), messed, anchor)
        assembled = assemble(messed, transforms, labels)
        scores.append(iou(assembled.occupancy(), union_occupancy(sample)))
    return float(np.mean(scores))


def sweep_quality(source, samples, labels, translations=None, scales=None, seed=0):
    """Fig-6-style sweep rows: (axis, magnitude, anchor_label, mean_iou, n).

    The translation sweep holds scale at 1.2; the scale sweep holds the
    per-axis translation magnitude at half the limit (10 * R / 64).
    """
    payload, net = load_assembler(source)
    r = payload["meta"]["resolution"]
    t_half = r * 10.0 / 64.0
    if translations is None:
        translations = [0.0, 0.25 * t_half, 0.5 * t_half, t_half, 1.5 * t_half, 2 * t_half]
    if scales is None:
        scales = [0.7, 0.85, 1.0, 1.15, 1.3, 1.45]

    rows = []
    for axis, grid in (("translation", translations), ("scale", scales)):
        for magnitude in grid:
            per_anchor = {lbl: [] for lbl in labels}
            for i, sample in enumerate(samples):
                rng = np.random.default_rng(derive_seed(seed, axis, i, int(magnitude * 16)))
                nonempty = sample.nonempty_indices()
                for anchor in nonempty:
                    messed = []
                    for p, part in enumerate(sample.parts):
                        if p == anchor or part.occupied_count() == 0:
                            messed.append(part.copy())
                            continue
                        signs = rng.choice([-1.0, 1.0], size=3)
                        if axis == "translation":
                            t = PartTransform((1.2, 1.2, 1.2), tuple(signs * magnitude))
                        else:
                            t = PartTransform((magnitude,) * 3, tuple(signs * t_half))
                        messed.append(apply_transform(part, t))
                    transforms = predict_transforms((payload, net), messed, anchor)
                    assembled = assemble(messed, transforms, labels)
                    score = iou(assembled.occupancy(), union_occupancy(sample))
                    per_anchor[labels[anchor]].append(score)
            for lbl in labels:
                vals = per_anchor[lbl]
                rows.append({
                    "axis": axis,
                    "magnitude": float(magnitude),
                    "anchor_label": lbl,
                    "mean_iou": float(np.mean(vals)) if vals else "",
                    "n": len(vals),
                })
    return rows


SWEEP_FIELDS = ("axis", "magnitude", "anchor_label", "mean_iou", "n")


def write_sweep_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
