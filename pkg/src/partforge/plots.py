"""Report figures rendered to files next to their CSV/JSON outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_sweep(rows, path):
    """Fig-6-style pair: mean IoU vs translation and vs scale, per anchor."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, axis_name, xlabel in (
        (axes[0], "translation", "translation (voxels)"),
        (axes[1], "scale", "scale factor"),
    ):
        anchors = sorted({r["anchor_label"] for r in rows if r["axis"] == axis_name})
        for anchor in anchors:
            pts = [(r["magnitude"], r["mean_iou"]) for r in rows
                   if r["axis"] == axis_name and r["anchor_label"] == anchor
                   and r["mean_iou"] != ""]
            if not pts:
                continue
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=f"anchor={anchor}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("mean IoU vs ground truth")
        ax.set_ylim(0, 1)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_symmetry(rows, path):
    labels = [r["label"] for r in rows]
    means = [r["mean_symmetry"] if r["mean_symmetry"] != "" else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(labels, means, color="#4878cf")
    ax.set_ylabel("mean symmetry measure")
    ax.set_ylim(0, 1)
    for i, (m, r) in enumerate(zip(means, rows)):
        ax.text(i, m + 0.02, f"n={r['n']}", ha="center", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_connectivity(rate, n, path):
    fig, ax = plt.subplots(figsize=(3.4, 3.2))
    ax.bar(["connected", "disconnected"], [rate, 1.0 - rate],
           color=["#59a14f", "#e15759"])
    ax.set_ylim(0, 1)
    ax.set_ylabel(f"fraction of {n} shapes")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_diversity(score, k, path):
    fig, ax = plt.subplots(figsize=(3.4, 3.2))
    ax.bar(["inception score"], [score], color="#b07aa1")
    ax.axhline(k, color="gray", linestyle="--", linewidth=1, label=f"upper bound k={k}")
    ax.axhline(1.0, color="gray", linestyle=":", linewidth=1, label="lower bound 1")
    ax.set_ylim(0, k * 1.15)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_seg(rows, path):
    labels = [r["label"] for r in rows]
    means = [r["mean_iou"] if r["mean_iou"] != "" else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(labels, means, color="#f28e2b")
    ax.set_ylabel("mean per-part IoU")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
