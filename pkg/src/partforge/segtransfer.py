"""Shape segmentation by projection onto the learned part-aware manifold.

A projector encoder maps a whole-shape volume to the structured latent
code; the frozen generators and assembler reconstruct a labeled shape,
and the reconstruction's labels are transferred to the input's occupied
voxels by nearest labeled voxel.
"""

from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage
from torch import optim

from .assembler import assemble, predict_transforms, union_occupancy
from .genops import EMPTY_MIN_VOXELS
from .models import (
    ProjectorNet,
    load_checkpoint,
    save_checkpoint,
    soft_union,
    stage_channels,
    warp_volumes,
)
from .partgen import TrainResult, TrainingDivergence, write_curves
from .seeds import derive_seed
from .voxgrid import LabeledGrid, iou, trans_limit


def _frozen_param_hash(bundle):
    import hashlib

    h = hashlib.sha256()
    for dec in bundle.decoders:
        for key, tensor in sorted(dec.state_dict().items()):
            h.update(key.encode())
            h.update(tensor.numpy().tobytes())
    for key, tensor in sorted(bundle.assembler[1].state_dict().items()):
        h.update(key.encode())
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def _differentiable_reconstruction(proj, bundle, x):
    """project -> decode -> anchor -> regress -> warp -> soft union."""
    b = x.shape[0]
    k = bundle.num_parts
    r = bundle.resolution
    code = proj(x).view(b, k, bundle.latent_dim)
    parts = torch.stack([bundle.decoders[i](code[:, i])[:, 0] for i in range(k)], dim=1)

    with torch.no_grad():
        counts = (parts >= 0.5).sum(dim=(2, 3, 4))
        anchors = counts.argmax(dim=1)
    rows = torch.arange(b)
    enc_in = parts.clone()
    enc_in[rows, anchors] = -(parts[rows, anchors].detach() >= 0.5).float()

    params = bundle.assembler[1](enc_in)  # [B, K, 6] in [0, 1]
    t_max = trans_limit(r)
    scales = 0.5 + params[..., :3]
    trans = -t_max + params[..., 3:] * 2.0 * t_max
    # the anchor stays exactly identity
    scales = scales.clone()
    trans = trans.clone()
    scales[rows, anchors] = 1.0
    trans[rows, anchors] = 0.0

    warped = warp_volumes(
        parts.reshape(b * k, 1, r, r, r),
        scales.reshape(b * k, 3),
        trans.reshape(b * k, 3),
    ).view(b, k, r, r, r)
    return soft_union(warped)


def train_projector(corpus, bundle, cfg, out_dir=None):
    """Fit the projector against input occupancy, PAGE parts held fixed."""
    if bundle.resolution != corpus.resolution:
        raise ValueError("corpus and model resolution differ")
    volumes = np.stack([union_occupancy(s).values for s in corpus.samples])
    x_all = torch.from_numpy(volumes.astype(np.float32))[:, None]
    n = x_all.shape[0]

    for dec in bundle.decoders:
        dec.requires_grad_(False)
    bundle.assembler[1].requires_grad_(False)
    before = _frozen_param_hash(bundle)

    torch.manual_seed(derive_seed(cfg.seed, "proj-init"))
    proj = ProjectorNet(bundle.resolution, bundle.num_parts, bundle.latent_dim,
                        cfg.base_channels)
    opt = optim.Adam(proj.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, 0.999))

    curves = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(derive_seed(cfg.seed, "proj-order", epoch)).permutation(n)
        total = 0.0
        batches = 0
        for lo in range(0, n, cfg.batch_size):
            idxs = order[lo:lo + cfg.batch_size]
            x = x_all[idxs]
            recon = _differentiable_reconstruction(proj, bundle, x)
            loss = ((recon - x[:, 0]) ** 2).mean()
            if not np.isfinite(loss.item()):
                raise TrainingDivergence("projector loss diverged")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        curves.append({"epoch": epoch, "phase": "projector", "recon": total / batches,
                       "kl": "", "ref": "", "adv_d": "", "adv_g": "", "gp": "",
                       "total": total / batches})

    after = _frozen_param_hash(bundle)
    if before != after:
        raise RuntimeError("frozen generator/assembler parameters changed during training")

    meta = {
        "resolution": bundle.resolution,
        "num_parts": bundle.num_parts,
        "latent_dim": bundle.latent_dim,
        "base_channels": cfg.base_channels,
        "channels": stage_channels(bundle.resolution, cfg.base_channels),
        "category": bundle.category.name,
        "frozen_model_hash": before,
        "train_config": asdict(cfg),
    }
    payload = {"version": 1, "kind": "projector", "meta": meta,
               "state_dict": proj.state_dict()}
    result = TrainResult(payload, curves)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint_path = out_dir / "projector.pt"
        save_checkpoint(result.checkpoint_path, "projector", proj.state_dict(), meta)
        result.curves_path = out_dir / "projector_losses.csv"
        write_curves(result.curves_path, curves)
    return result


def load_projector(source):
    if isinstance(source, tuple):
        return source
    payload = source if isinstance(source, dict) else load_checkpoint(source, "projector")
    meta = payload["meta"]
    proj = ProjectorNet(meta["resolution"], meta["num_parts"], meta["latent_dim"],
                        meta["base_channels"])
    proj.load_state_dict(payload["state_dict"])
    proj.eval()
    return payload, proj


def reconstruct_labeled(volume, projector_source, bundle):
    """Project a volume and decode/assemble its labeled reconstruction."""
    _, proj = load_projector(projector_source)
    x = torch.from_numpy(volume.values.astype(np.float32))[None, None]
    with torch.no_grad():
        code = proj(x)[0].numpy()
    parts = bundle.decode_code(code)
    counts = [p.occupied_count() for p in parts]
    candidates = [i for i, c in enumerate(counts) if c >= EMPTY_MIN_VOXELS]
    if not candidates:
        return None
    anchor = max(candidates, key=lambda i: counts[i])
    transforms = predict_transforms(bundle.assembler, parts, anchor)
    return assemble(parts, transforms, bundle.labels)


def transfer_labels(volume, reconstruction):
    """Label every occupied input voxel by its nearest labeled voxel.

    Distance ties break toward the smaller label index. Unoccupied input
    voxels stay 0; an empty reconstruction labels nothing.
    """
    r = volume.resolution
    occupied = volume.values >= 0.5
    out = np.zeros((r,) * 3, dtype=np.uint8)
    if reconstruction is None or not occupied.any():
        return LabeledGrid(out, reconstruction.label_names if reconstruction else ())
    labels = reconstruction.labels
    present = [k for k in range(1, reconstruction.num_parts + 1) if (labels == k).any()]
    if not present:
        return LabeledGrid(out, reconstruction.label_names)
    dists = np.stack([
        ndimage.distance_transform_edt(labels != k) for k in present
    ])
    nearest = np.argmin(dists, axis=0)  # first minimum wins: smaller label index
    chosen = np.array(present, dtype=np.uint8)[nearest]
    out[occupied] = chosen[occupied]
    return LabeledGrid(out, reconstruction.label_names)


def segment(volume, projector_source, bundle):
    """Semantic segmentation of an input volume via projection transfer."""
    if volume.occupied_count() == 0:
        return LabeledGrid(np.zeros((volume.resolution,) * 3, dtype=np.uint8),
                           bundle.labels)
    reconstruction = reconstruct_labeled(volume, projector_source, bundle)
    if reconstruction is None:
        return LabeledGrid(np.zeros((volume.resolution,) * 3, dtype=np.uint8),
                           bundle.labels)
    return transfer_labels(volume, reconstruction)


def label_iou(pred, gt_mask, k):
    pred_mask = pred.labels == k
    union = np.logical_or(pred_mask, gt_mask).sum()
    if union == 0:
        return None  # both empty: skip rather than inflate the mean
    return float(np.logical_and(pred_mask, gt_mask).sum() / union)


def seg_eval(test_samples, projector_source, bundle):
    """Per-part IoU table between predicted and ground-truth labelings."""
    per_label = {label: [] for label in bundle.labels}
    for sample in test_samples:
        volume = union_occupancy(sample)
        pred = segment(volume, projector_source, bundle)
        for k, label in enumerate(bundle.labels):
            gt_mask = sample.parts[k].values >= 0.5
            v = label_iou(pred, gt_mask, k + 1)
            if v is not None:
                per_label[label].append(v)
    rows = []
    means = []
    for label in bundle.labels:
        vals = per_label[label]
        mean = float(np.mean(vals)) if vals else ""
        if vals:
            means.append(mean)
        rows.append({"label": label, "mean_iou": mean, "n": len(vals)})
    rows.append({"label": "mean", "mean_iou": float(np.mean(means)), "n": len(test_samples)})
    return rows


def reconstruction_iou(samples, projector_source, bundle):
    """Mean IoU between inputs and their assembled reconstructions."""
    vals = []
    for sample in samples:
        volume = union_occupancy(sample)
        rec = reconstruct_labeled(volume, projector_source, bundle)
        vals.append(0.0 if rec is None else iou(rec.occupancy(), volume))
    return float(np.mean(vals))
