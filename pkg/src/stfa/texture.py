"""Dense block for texture enhancement of shallow feature maps.

Layer i sees the channel concatenation of the block input and the outputs of
layers 0..i-1, and contributes ``growth`` new channels via 3x3 conv -> relu.
The block output is [input, layer_0, ..., layer_{L-1}] in that order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class DenseBlockConfig:
    layers: int = 3
    growth: int = 8
    in_channels: int = 3

    def __post_init__(self):
        if self.layers < 0 or self.growth < 1 or self.in_channels < 1:
            raise ValueError(f"invalid dense block config {self}")

    @property
    def out_channels(self) -> int:
        return self.in_channels + self.layers * self.growth


def init_dense_block(cfg: DenseBlockConfig, rng: np.random.Generator,
                     prefix: str = "dense") -> dict[str, Tensor]:
    params = {}
    for i in range(cfg.layers):
        c_in = cfg.in_channels + i * cfg.growth
        std = np.sqrt(2.0 / (c_in * 9))
        params[f"{prefix}/layer{i}/weight"] = Tensor(
            rng.standard_normal((cfg.growth, c_in, 3, 3)) * std, requires_grad=True)
        params[f"{prefix}/layer{i}/bias"] = Tensor(np.zeros(cfg.growth), requires_grad=True)
    return params


def dense_block_forward(x: Tensor, cfg: DenseBlockConfig, params: dict[str, Tensor],
                        prefix: str = "dense") -> Tensor:
    if x.data.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ShapeError(f"dense block expects {cfg.in_channels} x H x W input, got {x.shape}")
    features = [x]
    stacked = x
    for i in range(cfg.layers):
        w = params[f"{prefix}/layer{i}/weight"]
        if w.shape != (cfg.growth, stacked.shape[0], 3, 3):
            raise ShapeError(f"{prefix}/layer{i}/weight has shape {w.shape}, "
                             f"expected {(cfg.growth, stacked.shape[0], 3, 3)}")
        out = T.relu(T.conv2d(stacked, w, stride=1, pad=1, bias=params[f"{prefix}/layer{i}/bias"]))
        features.append(out)
        stacked = T.concat(features, axis=0)
    return stacked
