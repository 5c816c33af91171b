"""CutMix batch augmentation and mask bookkeeping.

Each sample n is paired with a partner drawn by a uniform random
permutation of the batch. A mixing fraction lambda0 ~ Beta(alpha, alpha)
sets the rectangle side ratio sqrt(lambda0); the rectangle is filled from
the partner image, the rest keeps the original pixels:

    x' = M * x_partner + (1 - M) * x
    y' = lam * y_partner + (1 - lam) * y

The rectangle is placed uniformly among fully in-bounds positions, so its
realized area fraction equals lambda0 up to integer rounding of the sides
(a draw small enough to round to a zero side yields an empty mask, lam = 0,
and the sample passes through untouched). lam is always recomputed from
the realized mask area, never taken from the Beta draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CutMixBatch:
    """One mixed batch plus everything needed to reconstruct or supervise it.

    x: mixed images [N, C, H, W]; y: mixed label rows [N, K];
    mask: {0,1} float rectangles [N, 1, H, W] marking partner pixels;
    lam: realized partner-area fraction per sample [N];
    partner: permutation indices, sample n was mixed with partner[n].
    """

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    lam: np.ndarray
    partner: np.ndarray


def sample_cutmix(
    x: np.ndarray, y: np.ndarray, *, alpha: float = 1.0, rng: np.random.Generator
) -> CutMixBatch:
    """Mix a batch with itself under a random pairing.

    ``x`` is [N, C, H, W], ``y`` is [N, K] rows summing to 1. Labels mix
    with the same realized fraction as the pixels, so the pair (x', y')
    stays consistent for any rounding or degenerate draw.
    """
    if x.ndim != 4:
        raise ValueError(f"expected NCHW images, got shape {x.shape}")
    if y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise ValueError(f"labels {y.shape} do not match batch of {x.shape[0]}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n, _, h, w = x.shape
    partner = rng.permutation(n)
    mask = np.zeros((n, 1, h, w), dtype=x.dtype)
    lam = np.zeros(n, dtype=np.float64)
    for i in range(n):
        lam0 = rng.beta(alpha, alpha)
        side = np.sqrt(lam0)
        ph = min(int(round(h * side)), h)
        pw = min(int(round(w * side)), w)
        if ph > 0 and pw > 0:
            top = int(rng.integers(0, h - ph + 1))
            left = int(rng.integers(0, w - pw + 1))
            mask[i, 0, top : top + ph, left : left + pw] = 1.0
            lam[i] = (ph * pw) / (h * w)
    x_mixed = mask * x[partner] + (1.0 - mask) * x
    y_mixed = lam[:, None] * y[partner] + (1.0 - lam[:, None]) * y
    return CutMixBatch(x=x_mixed, y=y_mixed, mask=mask, lam=lam, partner=partner)


def downsample_mask(mask: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Area-averaged downsample of [N, 1, H, W] masks to the output grid.

    Each output cell is the exact mean of the input area it covers
    (fractional pixel rows/columns weighted by overlap), so values lie in
    [0, 1] and a constant mask stays constant for any grid ratio.
    """
    if mask.ndim != 4 or mask.shape[1] != 1:
        raise ValueError(f"expected [N,1,H,W] masks, got {mask.shape}")
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise ValueError(f"output grid must be positive, got {out_hw}")
    n, _, h, w = mask.shape

    def overlap(out_n: int, in_n: int) -> np.ndarray:
        # weights[o, i] = length of pixel i inside output bin o, normalized.
        edges = np.arange(out_n + 1) * (in_n / out_n)
        weights = np.zeros((out_n, in_n))
        for o in range(out_n):
            lo, hi = edges[o], edges[o + 1]
            for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), in_n)):
                weights[o, i] = min(hi, i + 1) - max(lo, i)
        return weights / (in_n / out_n)

    wr = overlap(oh, h)
    wc = overlap(ow, w)
    flat = mask.reshape(n, h, w)
    out = np.einsum("oi,nij,pj->nop", wr, flat, wc)
    return np.clip(out, 0.0, 1.0).reshape(n, 1, oh, ow).astype(mask.dtype)
