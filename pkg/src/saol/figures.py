"""Report figures rendered straight to image files.

Uses the non-interactive backend so rendering works headless; every
function takes explicit data and an output path and returns nothing.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle


def training_curves(metrics_path: str, out_path: str) -> None:
    """Loss and accuracy curves from a metrics CSV, one panel each."""
    rows = np.genfromtxt(metrics_path, delimiter=",", names=True)
    rows = np.atleast_1d(rows)
    epochs = rows["epoch"]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for key, label in [
        ("loss_sl", "classification"),
        ("loss_ss1", "mask"),
        ("loss_ss2", "map consistency"),
        ("loss_sd", "distillation"),
    ]:
        values = rows[key]
        if np.any(values != 0.0):
            ax_loss.plot(epochs, values, label=label)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    for key, label in [("acc_saol", "attended head"), ("acc_gapfc", "pooled head")]:
        if np.any(rows[key] != 0.0):
            ax_acc.plot(epochs, rows[key], label=label)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("top-1 accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)


def _draw_box(ax, box, color, label):
    r0, c0, r1, c1 = box
    ax.add_patch(
        Rectangle(
            (c0 - 0.5, r0 - 0.5),
            c1 - c0,
            r1 - r0,
            fill=False,
            edgecolor=color,
            linewidth=1.6,
            label=label,
        )
    )


def heatmap_panel(
    image: np.ndarray,
    attention: np.ndarray,
    score_map: np.ndarray,
    out_path: str,
    *,
    pred_box=None,
    gt_box=None,
    title: str | None = None,
) -> None:
    """Input image with boxes, the attention map, and a class score map.

    ``image`` is [3, H, W] in [0, 1]; boxes are half-open in image
    coordinates (drawn on the image panel, prediction solid red, ground
    truth green).
    """
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    axes[0].imshow(np.transpose(np.clip(image, 0.0, 1.0), (1, 2, 0)))
    axes[0].set_title(title or "input")
    if gt_box is not None:
        _draw_box(axes[0], gt_box, "lime", "truth")
    if pred_box is not None:
        _draw_box(axes[0], pred_box, "red", "predicted")
    if gt_box is not None or pred_box is not None:
        axes[0].legend(loc="lower right", fontsize=7)
    axes[1].imshow(attention, cmap="magma", interpolation="nearest")
    axes[1].set_title("attention")
    axes[2].imshow(score_map, cmap="viridis", interpolation="nearest")
    axes[2].set_title("class score map")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
