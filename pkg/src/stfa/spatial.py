"""Convolutional spatial attention over shallow features.

Maps come from a 1x1 convolution followed by relu, so they are non-negative.
They guide the features by element-wise multiplication with the mean map,
shared across channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionMap:
    weights: np.ndarray
    origin: str  # "spatial" or "temporal"

    def __post_init__(self):
        if self.origin not in ("spatial", "temporal"):
            raise ValueError(f"unknown attention origin {self.origin!r}")


def as_maps(maps: Tensor, origin: str = "spatial") -> list[AttentionMap]:
    data = maps.data if maps.data.ndim == 3 else maps.data[None]
    return [AttentionMap(np.array(m), origin) for m in data]


def init_spatial_attention(channels: int, m: int, rng: np.random.Generator,
                           prefix: str = "spatial") -> dict[str, Tensor]:
    std = np.sqrt(2.0 / channels)
    return {
        f"{prefix}/weight": Tensor(np.abs(rng.standard_normal((m, channels, 1, 1))) * std,
                                   requires_grad=True),
        f"{prefix}/bias": Tensor(np.zeros(m), requires_grad=True),
    }


def spatial_attention_maps(features: Tensor, params: dict[str, Tensor], m: int,
                           prefix: str = "spatial") -> Tensor:
    """M x H x W non-negative maps from a C x H x W feature stack."""
    if m < 1:
        raise ValueError(f"need at least one attention map, got M={m}")
    w = params[f"{prefix}/weight"]
    if w.shape[0] != m:
        raise ShapeError(f"{prefix}/weight yields {w.shape[0]} maps, expected {m}")
    return T.relu(T.conv2d(features, w, bias=params[f"{prefix}/bias"]))


def apply_spatial_attention(shallow: Tensor, maps: Tensor) -> Tensor:
    if maps.data.ndim != 3 or maps.shape[1:] != shallow.shape[1:]:
        raise ShapeError(f"attention maps {maps.shape} do not cover features {shallow.shape}")
    guide = T.mean(maps, axis=0)
    return T.mul(shallow, T.broadcast_channels(guide, shallow.shape[0]))
