"""Spatially attentive output layer and its companion heads.

Instead of pooling features and classifying the pooled vector, the model
predicts a class distribution at every output-grid location (the class
maps Y) plus a spatial attention distribution A over the same grid, and
aggregates

    p_k = sum_ij A[i, j] * Y[k, i, j]

so the prediction is an attention-weighted mixture of per-location class
posteriors. A is normalized by a softmax over all spatial positions jointly
(it sums to 1 per sample); Y is normalized by a softmax over classes at
each position (each location sums to 1). The class maps fuse several
pyramid levels: each selected feature map goes through a 1x1 projection,
is resized bilinearly to the output grid, the projections are concatenated
and fused by a final 1x1 convolution into one logit map per class.

Two optional companions share the backbone: a mask head with the same
topology as the attention head but a per-pixel sigmoid (used by the
mixed-image self-supervision losses), and a plain GAP-FC head (global
average pooling into a bias-free linear map) that is trained by
self-distillation and can serve predictions alone at deploy time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from saol.autodiff import Tensor, bilinear_resize, concat, global_avg_pool
from saol.backbone import Backbone, BackboneConfig
from saol.nn import Conv2d, Linear


@dataclass(frozen=True)
class HeadConfig:
    num_classes: int
    # 0-based pyramid indices to fuse into the class maps; None means all blocks.
    fused_blocks: tuple[int, ...] | None = None
    # Output grid; None means the deepest feature map's own size.
    out_hw: tuple[int, int] | None = None
    # Projection / attention mid widths; None means ceil(C_last / 2).
    proj_channels: int | None = None
    attn_channels: int | None = None
    with_mask: bool = True
    with_gapfc: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.fused_blocks is not None:
            object.__setattr__(self, "fused_blocks", tuple(int(i) for i in self.fused_blocks))
            if len(set(self.fused_blocks)) != len(self.fused_blocks) or not self.fused_blocks:
                raise ValueError("fused_blocks must be a non-empty set of distinct indices")
        if self.out_hw is not None:
            object.__setattr__(self, "out_hw", (int(self.out_hw[0]), int(self.out_hw[1])))
            if min(self.out_hw) < 1:
                raise ValueError("out_hw must be positive")


@dataclass
class SaolOutput:
    """Everything one forward pass produces.

    attention: [N, 1, H, W], nonnegative, sums to 1 over the grid.
    class_maps: [N, K, H, W], each location a distribution over classes.
    probs: [N, K] aggregated prediction, a distribution per sample.
    mask: [N, 1, H, W] per-pixel sigmoid scores, or None.
    gapfc_probs: [N, K] probabilities of the GAP-FC head, or None.
    pyramid: backbone feature maps, deepest last.
    """

    attention: Tensor
    class_maps: Tensor
    probs: Tensor
    mask: Tensor | None
    gapfc_probs: Tensor | None
    pyramid: list[Tensor]


def attended_aggregate(attention: Tensor, class_maps: Tensor) -> Tensor:
    """p_k = sum_ij A_ij * Y_kij; convex mixture of per-location posteriors."""
    if attention.ndim != 4 or attention.shape[1] != 1:
        raise ValueError(f"attention must be [N,1,H,W], got {attention.shape}")
    if class_maps.shape[2:] != attention.shape[2:] or class_maps.shape[0] != attention.shape[0]:
        raise ValueError(
            f"grids disagree: attention {attention.shape} vs class maps {class_maps.shape}"
        )
    return (attention * class_maps).sum(axes=(2, 3))


class ScoreMapHead:
    """conv3x3 -> relu -> conv1x1 to a single map; attention and mask share it.

    The output conv starts at zero so the map begins flat (uniform attention,
    0.5 mask); a saturated softmax in float32 would otherwise stop gradient
    flow before training starts."""

    def __init__(self, in_ch: int, mid_ch: int, *, rng: np.random.Generator, dtype):
        self.conv1 = Conv2d(in_ch, mid_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(mid_ch, 1, 1, rng=rng, dtype=dtype)
        self.conv2.weight.data[...] = 0.0

    def logits(self, x: Tensor, out_hw: tuple[int, int]) -> Tensor:
        z = self.conv2(self.conv1(x).relu())
        return bilinear_resize(z, out_hw)

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.conv1.named_params(f"{prefix}.conv1")
        yield from self.conv2.named_params(f"{prefix}.conv2")

    def macs(self, in_hw: tuple[int, int]) -> int:
        m1, hw = self.conv1.macs(in_hw)
        m2, _ = self.conv2.macs(hw)
        return m1 + m2


class SaolClassifier:
    """Backbone plus all output heads; the only model object in the package."""

    def __init__(
        self,
        backbone_config: BackboneConfig,
        head_config: HeadConfig,
        *,
        seed: int = 0,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.backbone_config = backbone_config
        self.head_config = head_config
        self.dtype = np.dtype(dtype)

        self.backbone = Backbone(backbone_config, rng=rng, dtype=dtype)
        chans = backbone_config.scaled_channels()
        c_last = chans[-1]
        fused = head_config.fused_blocks
        self.fused_blocks = tuple(range(len(chans))) if fused is None else fused
        if max(self.fused_blocks) >= len(chans) or min(self.fused_blocks) < 0:
            raise ValueError(
                f"fused_blocks {self.fused_blocks} out of range for {len(chans)} blocks"
            )
        mid = head_config.proj_channels or (c_last + 1) // 2
        attn_mid = head_config.attn_channels or (c_last + 1) // 2

        self.attention_head = ScoreMapHead(c_last, attn_mid, rng=rng, dtype=dtype)
        self.projections = [
            Conv2d(chans[i], mid, 1, rng=rng, dtype=dtype) for i in self.fused_blocks
        ]
        self.fuse = Conv2d(mid * len(self.fused_blocks), head_config.num_classes, 1, rng=rng, dtype=dtype)
        # logit-producing layers start at zero: every head then opens with a
        # uniform distribution instead of a saturated one
        self.fuse.weight.data[...] = 0.0
        self.gapfc = (
            Linear(c_last, head_config.num_classes, bias=False, rng=rng, dtype=dtype)
            if head_config.with_gapfc
            else None
        )
        if self.gapfc is not None:
            self.gapfc.weight.data[...] = 0.0
        self.mask_head = ScoreMapHead(c_last, attn_mid, rng=rng, dtype=dtype) if head_config.with_mask else None

    # ---- forward pieces ------------------------------------------------------

    def _out_hw(self, pyramid: list[Tensor]) -> tuple[int, int]:
        return self.head_config.out_hw or pyramid[-1].shape[2:]

    def class_maps(self, pyramid: list[Tensor]) -> Tensor:
        """Per-location class posteriors on the output grid: project each

        fused level to a common width, resize, concatenate, fuse to one map
        per class, then softmax over the class axis at every location."""
        out_hw = self._out_hw(pyramid)
        parts = [
            bilinear_resize(proj(pyramid[i]), out_hw)
            for proj, i in zip(self.projections, self.fused_blocks)
        ]
        fused = self.fuse(parts[0] if len(parts) == 1 else concat(parts, axis=1))
        return fused.softmax(1)

    def attention(self, pyramid: list[Tensor]) -> Tensor:
        """Spatial attention distribution: head logits, then softmax jointly

        over the whole grid so the map sums to one per sample."""
        logits = self.attention_head.logits(pyramid[-1], self._out_hw(pyramid))
        return logits.softmax((2, 3))

    def forward(self, x: Tensor | np.ndarray) -> SaolOutput:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4:
            raise ValueError(f"expected NCHW input, got shape {x.shape}")
        pyramid = self.backbone(x)
        attention = self.attention(pyramid)
        maps = self.class_maps(pyramid)
        probs = attended_aggregate(attention, maps)
        mask = None
        if self.mask_head is not None:
            mask = self.mask_head.logits(pyramid[-1], self._out_hw(pyramid)).sigmoid()
        gap_probs = None
        if self.gapfc is not None:
            gap_probs = self.gapfc(global_avg_pool(pyramid[-1])).softmax(1)
        return SaolOutput(attention, maps, probs, mask, gap_probs, pyramid)

    __call__ = forward

    # ---- bookkeeping -----------------------------------------------------------

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.backbone.named_params())
        out.update(self.attention_head.named_params("attention"))
        for idx, proj in zip(self.fused_blocks, self.projections):
            out.update(proj.named_params(f"project.block{idx}"))
        out.update(self.fuse.named_params("fuse"))
        if self.gapfc is not None:
            out.update(self.gapfc.named_params("gapfc"))
        if self.mask_head is not None:
            out.update(self.mask_head.named_params("mask"))
        return out

    def count_ops(self, image_hw: tuple[int, int]) -> tuple[int, int]:
        """(parameter count, forward FLOPs for one image).

        FLOPs are 2x multiply-accumulates of the conv/linear contractions;
        elementwise work and softmaxes are not counted.
        """
        params = sum(int(np.prod(t.shape)) for t in self.named_params().values())
        macs, sizes = self.backbone.macs(image_hw)
        out_hw = self.head_config.out_hw or sizes[-1]
        macs += self.attention_head.macs(sizes[-1])
        for proj, i in zip(self.projections, self.fused_blocks):
            macs += proj.macs(sizes[i])[0]
        macs += self.fuse.macs(out_hw)[0]
        if self.mask_head is not None:
            macs += self.mask_head.macs(sizes[-1])
        if self.gapfc is not None:
            macs += self.gapfc.macs()
        return params, 2 * macs
