"""Parameterized layers on top of the autodiff core.

He-uniform initialization everywhere (bound sqrt(6/fan_in)), zero biases.
Layers expose ``named_params`` for optimizers/checkpoints and ``macs`` for
operation counting (multiply-accumulates for one image).
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from saol.autodiff import Tensor, conv2d, matmul


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d:
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int,
        *,
        stride: int = 1,
        padding: int = 0,
        rng: np.random.Generator,
        dtype=np.float64,
    ):
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(
            he_uniform(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def macs(self, in_hw: tuple[int, int]) -> tuple[int, tuple[int, int]]:
        f, c, kh, kw = self.weight.shape
        oh = (in_hw[0] + 2 * self.padding - kh) // self.stride + 1
        ow = (in_hw[1] + 2 * self.padding - kw) // self.stride + 1
        return c * kh * kw * f * oh * ow, (oh, ow)


class Linear:
    """Dense layer x[N,in] @ W[in,out]; bias is optional and off by default."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        *,
        bias: bool = False,
        rng: np.random.Generator,
        dtype=np.float64,
    ):
        self.weight = Tensor(
            he_uniform(rng, (in_features, out_features), in_features, dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out if self.bias is None else out + self.bias

    def named_params(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def macs(self) -> int:
        return int(np.prod(self.weight.shape))
