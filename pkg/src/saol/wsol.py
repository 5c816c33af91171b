"""Localization from classifier score maps, plus box metrics and export.

A per-class spatial score map is normalized to [0, 1], thresholded, and the
largest 4-connected component's bounding box (scaled to image coordinates)
becomes the predicted location. Boxes are half-open (row0, col0, row1, col1)
throughout.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .autodiff import Tensor, bilinear_resize
from .head import SaolOutput

DEFAULT_THRESHOLD = 0.2


def class_score_map(
    output: SaolOutput,
    labels: np.ndarray,
    *,
    head: str = "saol",
    gapfc_weight: np.ndarray | None = None,
) -> np.ndarray:
    """Spatial evidence map [N, h, w] for each sample's class in ``labels``.

    ``head="saol"`` multiplies the attention map with the chosen class's
    probability map. ``head="gapfc"`` weights the final feature maps by that
    class's classifier column (requires ``gapfc_weight`` of shape [C, K]).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if head == "saol":
        att = output.attention.data[:, 0]
        maps = output.class_maps.data
        return att * maps[np.arange(len(labels)), labels]
    if head == "gapfc":
        if gapfc_weight is None:
            raise ValueError("gapfc head needs the classifier weight matrix")
        feats = output.pyramid[-1].data
        return np.einsum("nchw,nc->nhw", feats, gapfc_weight[:, labels].T)
    raise ValueError(f"unknown head {head!r}")


def min_max_normalize(maps: np.ndarray) -> np.ndarray:
    """Rescale each [h, w] slice to [0, 1]; constant slices become zeros."""
    maps = np.asarray(maps, dtype=np.float64)
    flat = maps.reshape(maps.shape[0], -1)
    lo = flat.min(axis=1)[:, None, None]
    hi = flat.max(axis=1)[:, None, None]
    span = hi - lo
    out = np.zeros_like(maps)
    np.divide(maps - lo, span, out=out, where=span > 0)
    return out


def largest_component(binary: np.ndarray) -> np.ndarray | None:
    """Largest 4-connected True region; size ties keep the one whose first

    pixel comes earliest in raster order. None when the mask is empty."""
    labels, n = ndimage.label(binary)
    if n == 0:
        return None
    counts = np.bincount(labels.ravel())[1:]
    return labels == int(np.argmax(counts)) + 1


def extract_box(
    score_map: np.ndarray,
    image_hw: tuple[int, int],
    *,
    threshold: float = DEFAULT_THRESHOLD,
    upsample: bool = False,
) -> tuple[int, int, int, int]:
    """Half-open box around the strongest region of a normalized score map.

    Cells at or above ``threshold`` count as foreground. With ``upsample``
    the map is first resized bilinearly to the image, otherwise the
    component box is scaled so each cell covers its image-space footprint.
    An all-background map falls back to the whole image.
    """
    ih, iw = image_hw
    score_map = np.asarray(score_map, dtype=np.float64)
    if upsample and score_map.shape != (ih, iw):
        resized = bilinear_resize(Tensor(score_map[None, None]), (ih, iw))
        score_map = resized.data[0, 0]
    component = largest_component(score_map >= threshold)
    if component is None:
        return (0, 0, ih, iw)
    rows = np.flatnonzero(component.any(axis=1))
    cols = np.flatnonzero(component.any(axis=0))
    h, w = component.shape
    r0 = int(np.floor(rows[0] * ih / h))
    c0 = int(np.floor(cols[0] * iw / w))
    r1 = int(np.ceil((rows[-1] + 1) * ih / h))
    c1 = int(np.ceil((cols[-1] + 1) * iw / w))
    return (r0, c0, r1, c1)


def iou(a, b) -> float:
    """Intersection over union of two half-open boxes."""
    inter_h = min(a[2], b[2]) - max(a[0], b[0])
    inter_w = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(0, inter_h) * max(0, inter_w)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def loc_accuracy(
    pred_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    *,
    iou_thresh: float = 0.5,
) -> dict[str, float]:
    """Localization scores: ``gt_known`` ignores the class prediction,

    ``top1`` additionally requires it to be right."""
    ious = np.array([iou(p, g) for p, g in zip(pred_boxes, gt_boxes)])
    located = ious >= iou_thresh
    correct = np.asarray(pred_labels) == np.asarray(gt_labels)
    return {
        "gt_known": float(located.mean()),
        "top1": float((located & correct).mean()),
        "mean_iou": float(ious.mean()),
    }


def write_pgm(path: str, score_map: np.ndarray) -> None:
    """8-bit binary PGM of a [0, 1] map."""
    score_map = np.asarray(score_map, dtype=np.float64)
    h, w = score_map.shape
    gray = np.clip(np.rint(score_map * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def write_map_csv(path: str, score_map: np.ndarray) -> None:
    """Raw float values, one map row per line."""
    with open(path, "w") as f:
        for row in np.asarray(score_map, dtype=np.float64):
            f.write(",".join(repr(float(v)) for v in row) + "\n")
