"""Plain residual convolutional backbone without normalization layers.

The network is a sequence of blocks; each block opens with a strided
residual unit that changes the channel count and halves (or keeps) the
resolution, followed by identity-skip units. A unit computes

    y = skip(x) + conv2(relu(conv1(x)))

where conv1 carries the stride and the skip is a strided 1x1 projection for
the opening unit of every block (so an all-zero parameter set maps any
input to an all-zero feature pyramid) and the identity otherwise. The
forward pass returns the whole pyramid, one feature map per block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from saol.autodiff import Tensor
from saol.nn import Conv2d


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    channels: tuple[int, ...] = (16, 32, 64)
    strides: tuple[int, ...] = (1, 2, 2)
    layers_per_block: int = 2
    width: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if not self.channels:
            raise ValueError("need at least one block")
        if len(self.channels) != len(self.strides):
            raise ValueError(
                f"channels ({len(self.channels)}) and strides ({len(self.strides)}) disagree"
            )
        if min(self.channels) < 1 or min(self.strides) < 1:
            raise ValueError("channels and strides must be positive")
        if self.in_channels < 1 or self.layers_per_block < 1 or self.width < 1:
            raise ValueError("in_channels, layers_per_block and width must be positive")

    @property
    def num_blocks(self) -> int:
        return len(self.channels)

    def scaled_channels(self) -> tuple[int, ...]:
        return tuple(c * self.width for c in self.channels)


class ResidualUnit:
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        stride: int,
        *,
        project: bool,
        rng: np.random.Generator,
        dtype,
    ):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        # without normalization layers, each unit starts as its skip path:
        # a zeroed branch keeps feature scale flat with depth, which float32
        # training needs to avoid softmax saturation downstream
        self.conv2.weight.data[...] = 0.0
        self.proj = (
            Conv2d(in_ch, out_ch, 1, stride=stride, padding=0, rng=rng, dtype=dtype)
            if project
            else None
        )

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(self.conv1(x).relu())
        s = self.proj(x) if self.proj is not None else x
        return s + h

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.conv1.named_params(f"{prefix}.conv1")
        yield from self.conv2.named_params(f"{prefix}.conv2")
        if self.proj is not None:
            yield from self.proj.named_params(f"{prefix}.proj")

    def macs(self, in_hw: tuple[int, int]) -> tuple[int, tuple[int, int]]:
        m1, hw = self.conv1.macs(in_hw)
        m2, hw = self.conv2.macs(hw)
        total = m1 + m2
        if self.proj is not None:
            mp, _ = self.proj.macs(in_hw)
            total += mp
        return total, hw


class Backbone:
    def __init__(self, config: BackboneConfig, *, rng: np.random.Generator, dtype=np.float64):
        self.config = config
        self.blocks: list[list[ResidualUnit]] = []
        cin = config.in_channels
        for c, s in zip(config.scaled_channels(), config.strides):
            units = [ResidualUnit(cin, c, s, project=True, rng=rng, dtype=dtype)]
            for _ in range(config.layers_per_block - 1):
                units.append(ResidualUnit(c, c, 1, project=False, rng=rng, dtype=dtype))
            self.blocks.append(units)
            cin = c

    def __call__(self, x: Tensor) -> list[Tensor]:
        """Feature pyramid, one map per block, deepest last."""
        pyramid = []
        for units in self.blocks:
            for unit in units:
                x = unit(x)
            pyramid.append(x)
        return pyramid

    def named_params(self, prefix: str = "backbone") -> Iterator[tuple[str, Tensor]]:
        for i, units in enumerate(self.blocks):
            for j, unit in enumerate(units):
                yield from unit.named_params(f"{prefix}.block{i}.unit{j}")

    def macs(self, in_hw: tuple[int, int]) -> tuple[int, list[tuple[int, int]]]:
        """Total multiply-accumulates and the per-block output sizes."""
        total = 0
        sizes = []
        hw = in_hw
        for units in self.blocks:
            for unit in units:
                m, hw = unit.macs(hw)
                total += m
            sizes.append(hw)
        return total, sizes
