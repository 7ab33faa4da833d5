"""Corpus-level evaluation: symmetry tables, connectivity, diversity.

The diversity measure follows the cluster-then-classify recipe: k-means
over coarse occupancy features of the training shapes defines pseudo
classes, a small volumetric classifier is fit to them, and the inception
score is exp of the mean KL between per-sample posteriors and the
marginal.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.cluster.vq import kmeans2
from torch import nn, optim

from .models import ConvTrunk
from .seeds import derive_seed
from .voxgrid import is_connected, symmetry_measure

SPLIT_THRESHOLD = 0.5  # generated parts carry no flags; split by measure


def symmetry_report(shapes, labels):
    """Rows of mean symmetry per part label plus one row for full shapes.

    Part rows measure the pre-assembly decoded parts; the full row
    measures the assembled occupancy. Each part row also carries a
    symmetric/asymmetric split thresholded at 0.5.
    """
    if not shapes:
        raise ValueError("symmetry_report needs at least one shape")
    rows = []
    for k, label in enumerate(labels):
        vals = [symmetry_measure(s.parts[k]) for s in shapes
                if s.parts[k].occupied_count() > 0]
        sym = [v for v in vals if v >= SPLIT_THRESHOLD]
        asym = [v for v in vals if v < SPLIT_THRESHOLD]
        rows.append({
            "label": label,
            "kind": "part",
            "mean_symmetry": float(np.mean(vals)) if vals else "",
            "n": len(vals),
            "mean_symmetric_split": float(np.mean(sym)) if sym else "",
            "n_symmetric": len(sym),
            "mean_asymmetric_split": float(np.mean(asym)) if asym else "",
            "n_asymmetric": len(asym),
        })
    full = [symmetry_measure(s.assembled.occupancy()) for s in shapes]
    rows.append({
        "label": "full", "kind": "full",
        "mean_symmetry": float(np.mean(full)), "n": len(full),
        "mean_symmetric_split": "", "n_symmetric": "",
        "mean_asymmetric_split": "", "n_asymmetric": "",
    })
    return rows


def connectivity_rate(shapes):
    """Fraction of shapes whose assembled occupancy is one 26-connected blob."""
    if not shapes:
        raise ValueError("connectivity_rate needs at least one shape")
    flags = [is_connected(s.assembled.occupancy()) for s in shapes]
    return float(np.mean(flags))


def coarse_features(volumes, cell=None):
    """Binarize and block-average volumes down to 8^3 occupancy fractions."""
    feats = []
    for v in volumes:
        arr = (v >= 0.5).astype(np.float64)
        r = arr.shape[0]
        c = cell if cell else r // 8
        if c < 1 or r != 8 * c:
            raise ValueError(f"resolution {r} not reducible to 8^3 blocks")
        reduced = arr.reshape(8, c, 8, c, 8, c).mean(axis=(1, 3, 5))
        feats.append(reduced.reshape(-1))
    return np.stack(feats)


class ClusterClassifier(nn.Module):
    """Small volumetric classifier over cluster pseudo-labels."""

    def __init__(self, resolution, k, base_channels=8):
        super().__init__()
        self.trunk = ConvTrunk(resolution, 1, base_channels)
        self.fc = nn.Linear(self.trunk.out_dim, k)

    def forward(self, x):
        return self.fc(self.trunk(x))


def fit_cluster_classifier(train_volumes, k, seed, epochs=8, batch_size=16, lr=1e-3):
    """Cluster training volumes, then fit the classifier to the clusters."""
    n = len(train_volumes)
    if k > n:
        raise ValueError(f"k={k} exceeds corpus size {n}")
    feats = coarse_features(train_volumes)
    _, assignments = kmeans2(feats, k, minit="++",
                             seed=np.random.default_rng(derive_seed(seed, "kmeans")))
    x = torch.from_numpy(np.stack(train_volumes).astype(np.float32))[:, None]
    y = torch.from_numpy(assignments.astype(np.int64))
    torch.manual_seed(derive_seed(seed, "clf-init"))
    r = x.shape[-1]
    clf = ClusterClassifier(r, k)
    opt = optim.Adam(clf.parameters(), lr=lr)
    for epoch in range(epochs):
        order = np.random.default_rng(derive_seed(seed, "clf-order", epoch)).permutation(n)
        for lo in range(0, n, batch_size):
            idxs = order[lo:lo + batch_size]
            logits = clf(x[idxs])
            loss = F.cross_entropy(logits, y[idxs])
            opt.zero_grad()
            loss.backward()
            opt.step()
    clf.eval()
    return clf, assignments


def inception_score_from_probs(probs):
    """exp(mean_x KL(p(y|x) || p(y))) for a row-stochastic prob matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("probs must be [n, k] with n >= 1")
    eps = 1e-12
    p = np.clip(probs, eps, 1.0)
    p = p / p.sum(axis=1, keepdims=True)
    marginal = p.mean(axis=0)
    kl = (p * (np.log(p) - np.log(marginal))).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score(shapes, train_corpus, k=8, seed=0):
    """Diversity of generated shapes against train-corpus clusters."""
    from .assembler import union_occupancy

    train_volumes = [union_occupancy(s).values for s in train_corpus.samples]
    clf, _ = fit_cluster_classifier(train_volumes, k, seed)
    eval_volumes = np.stack([
        (s.assembled.occupancy().values).astype(np.float32) for s in shapes
    ])
    with torch.no_grad():
        logits = clf(torch.from_numpy(eval_volumes)[:, None])
        probs = torch.softmax(logits, dim=1).numpy()
    score = inception_score_from_probs(probs)
    assert 1.0 - 1e-9 <= score <= k + 1e-9, "inception score left its [1, k] bound"
    return score


@dataclass
class EvalReport:
    """Aggregated evaluation numbers; every entry carries its sample size."""

    n: int
    seed: int
    config: dict = field(default_factory=dict)
    symmetry: list = None
    assembly: list = None
    connectivity: float = None
    inception: float = None
    inception_k: int = None

    def to_dict(self):
        return {
            "n": self.n,
            "seed": self.seed,
            "config": self.config,
            "symmetry": self.symmetry,
            "assembly": self.assembly,
            "connectivity_rate": self.connectivity,
            "inception_score": self.inception,
            "inception_k": self.inception_k,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def write_rows_csv(path, rows):
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return Path(path)
