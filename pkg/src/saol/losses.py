"""Training objectives for the attentive output layer.

All parts consume probabilities (not logits) and guard every logarithm
with a fixed epsilon of 1e-12, so each part is nonnegative up to that
smoothing. KL divergences are taken target-first, D(target || prediction),
with the target side always detached: distillation teachers and mixed-mask
teachers supervise without receiving gradients.

The total objective is a weighted sum (every weight defaults to 1) of
whichever parts are enabled: classification cross-entropy on the attended
prediction, binary cross-entropy of the mask head against the area-averaged
mixing mask, the mask-weighted KL between clean-image class maps and
mixed-image class maps, and the self-distillation pair (KL from the
attended prediction into the GAP-FC head plus a beta-weighted cross-entropy
anchor). The dictionary that ``total_loss`` returns reports each part
unweighted; the weights enter only the "total" entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from saol.autodiff import Tensor
from saol.head import SaolOutput

EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    use_ss1: bool = False
    use_ss2: bool = False
    use_sd: bool = False
    beta: float = 0.5
    w_sl: float = 1.0
    w_ss1: float = 1.0
    w_ss2: float = 1.0
    w_sd: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        for name in ("w_sl", "w_ss1", "w_ss2", "w_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _check_nonneg(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")


def cross_entropy(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -sum_k y_k log(p_k + eps); targets are rows

    of a distribution (one-hot or mixed)."""
    targets = np.asarray(targets)
    if probs.shape != targets.shape:
        raise ValueError(f"probs {probs.shape} vs targets {targets.shape}")
    _check_nonneg(probs.data, "probabilities")
    _check_nonneg(targets, "targets")
    ll = (probs + EPS).log() * targets
    return -(ll.sum(axes=(1,)).mean())


def mask_bce(pred: Tensor, target: np.ndarray) -> Tensor:
    """Pixel-mean binary cross-entropy; targets may be fractional in [0,1]."""
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mask prediction {pred.shape} vs target {target.shape}")
    if np.any(target < 0) or np.any(target > 1):
        raise ValueError("mask targets must lie in [0, 1]")
    _check_nonneg(pred.data, "mask probabilities")
    ll = (pred + EPS).log() * target + ((1.0 - pred) + EPS).log() * (1.0 - target)
    return -(ll.mean())


def masked_map_kl(student: Tensor, teacher: Tensor | np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted mean over samples and grid cells of D(teacher || student).

    ``student`` and ``teacher`` are class maps [N, K, h, w] with a
    distribution at every location; ``weights`` is [N, 1, h, w] in [0, 1].
    The normalizer is the total weight, so coverage scaling with identical
    per-position divergence leaves the value unchanged, and an all-zero
    weight field gives exactly 0. The teacher is detached: gradients reach
    only the student maps.
    """
    teacher = teacher.detach() if isinstance(teacher, Tensor) else Tensor(np.asarray(teacher))
    weights = np.asarray(weights)
    if student.shape != teacher.shape:
        raise ValueError(f"student {student.shape} vs teacher {teacher.shape}")
    if weights.shape != (student.shape[0], 1) + student.shape[2:]:
        raise ValueError(f"weights {weights.shape} do not match maps {student.shape}")
    if np.any(weights < 0) or np.any(weights > 1):
        raise ValueError("weights must lie in [0, 1]")
    _check_nonneg(student.data, "student maps")
    _check_nonneg(teacher.data, "teacher maps")
    total = float(weights.sum())
    if total == 0.0:
        return Tensor(np.zeros((), dtype=student.dtype))
    per_cell = (teacher * ((teacher + EPS).log() - (student + EPS).log())).sum(
        axes=(1,), keepdims=True
    )
    return (per_cell * weights).sum() / total


def self_distillation(
    teacher_probs: Tensor, student_probs: Tensor, targets: np.ndarray, *, beta: float = 0.5
) -> Tensor:
    """D(teacher || student) averaged over the batch, plus beta * CE(student, y).

    The teacher (the attended prediction) is detached; only the student
    (GAP-FC) side and the shared trunk under it receive gradients.
    """
    teacher = teacher_probs.detach()
    if teacher.shape != student_probs.shape:
        raise ValueError(f"teacher {teacher.shape} vs student {student_probs.shape}")
    _check_nonneg(student_probs.data, "student probabilities")
    _check_nonneg(teacher.data, "teacher probabilities")
    kl = (teacher * ((teacher + EPS).log() - (student_probs + EPS).log())).sum(axes=(1,)).mean()
    return kl + beta * cross_entropy(student_probs, targets)


def total_loss(
    output: SaolOutput,
    targets: np.ndarray,
    config: LossConfig,
    *,
    mask_down: np.ndarray | None = None,
    teacher_maps: Tensor | np.ndarray | None = None,
) -> dict[str, Tensor]:
    """Assemble the enabled parts into the training objective.

    ``mask_down`` is the area-averaged mixing mask on the output grid; it is
    both the ss1 target and the ss2 weight field. ``teacher_maps`` are the
    clean partner images' class maps. Returns per-part tensors plus "total";
    disabled parts are absent. The parts are reported unweighted; the
    configured weights scale their contributions to "total" only.
    """
    parts: dict[str, Tensor] = {"sl": cross_entropy(output.probs, targets)}
    if config.use_ss1:
        if output.mask is None or mask_down is None:
            raise ValueError("ss1 needs a mask head output and a downsampled mixing mask")
        parts["ss1"] = mask_bce(output.mask, mask_down)
    if config.use_ss2:
        if teacher_maps is None or mask_down is None:
            raise ValueError("ss2 needs clean-image class maps and a downsampled mixing mask")
        parts["ss2"] = masked_map_kl(output.class_maps, teacher_maps, mask_down)
    if config.use_sd:
        if output.gapfc_probs is None:
            raise ValueError("self-distillation needs the GAP-FC head")
        parts["sd"] = self_distillation(output.probs, output.gapfc_probs, targets, beta=config.beta)
    total = parts["sl"] * config.w_sl
    for key, weight in (("ss1", config.w_ss1), ("ss2", config.w_ss2), ("sd", config.w_sd)):
        if key in parts:
            total = total + parts[key] * weight
    parts["total"] = total
    return parts
