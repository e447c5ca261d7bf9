"""Figures and delimited tables for the CLI report paths."""
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_WIDTH = 6.0
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
    "svg.hashsalt": "facelm",
}


def _figure(nrows=1, ncols=1, height=None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(nrows, ncols, figsize=(FIG_WIDTH, height or FIG_WIDTH * GOLDEN))
    return fig, ax


def _save(fig, path):
    with plt.rc_context(_RC):
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)


def write_csv(rows, path, fieldnames=None):
    rows = list(rows)
    fieldnames = fieldnames or list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def plot_loss_trace(trace, path):
    fig, ax = _figure()
    trace = np.asarray(trace, dtype=float)
    positive = trace > 0
    ax.semilogy(np.arange(len(trace))[positive], trace[positive], marker="o", ms=3)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean wing loss")
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path)


def plot_region_metrics(metrics, path):
    fig, ax = _figure()
    names = list(metrics)
    ax.bar(names, [metrics[n] for n in names], color="0.4")
    ax.set_ylabel("mean wing loss")
    _save(fig, path)


def plot_landmarks(path, pred, gt=None):
    """Frontal (x-y) and profile (z-y) scatter of one or two landmark sets."""
    fig, axes = _figure(1, 2)
    for ax, (h, label) in zip(axes, ((0, "x"), (2, "z"))):
        if gt is not None:
            ax.scatter(gt[:, h], gt[:, 1], s=10, facecolors="none", edgecolors="k", label="reference")
        ax.scatter(pred[:, h], pred[:, 1], s=6, c="tab:red", label="estimate")
        ax.set_xlabel(label)
        ax.set_ylabel("y")
        ax.set_aspect("equal")
    if gt is not None:
        axes[0].legend(loc="lower left")
    _save(fig, path)


def plot_volume_slices(volume, path):
    """Central axial, coronal and sagittal slices of the occupied rgb."""
    data = volume.data
    rgb = np.moveaxis(data[:3], 0, -1) * data[3][..., None]
    mid = volume.res // 2
    slices = (("z", rgb[mid]), ("y", rgb[:, mid]), ("x", rgb[:, :, mid]))
    fig, axes = _figure(1, 3, height=FIG_WIDTH / 3.0)
    for ax, (name, img) in zip(axes, slices):
        ax.imshow(np.clip(img, 0.0, 1.0), origin="lower", interpolation="nearest")
        ax.set_title(f"{name} = mid")
        ax.set_xticks([])
        ax.set_yticks([])
    _save(fig, path)
