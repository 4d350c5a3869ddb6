"""Patch-sequence temporal attention driven by motion residuals.

The residual stack is encoded by a small conv, pooled to a grid divisible by
three and cut into a 3x3 sequence of patches. The patches are embedded,
prefixed with a class token and run through one transformer encoder layer. A
learned forgery template scores each patch latent; the softmax of those
scores is the 3x3 attention map that re-weights deep features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

GRID = 3
SEQ = GRID * GRID


@dataclass(frozen=True)
class TemporalConfig:
    in_channels: int = 2      # |frame difference|, flow magnitude
    feature_channels: int = 4
    pre_pool: int = 4
    embed_dim: int = 32
    mlp_dim: int = 64
    input_size: int = 32      # residual extent, square

    @property
    def grid_extent(self) -> int:
        return _pooled_extent(self.input_size // self.pre_pool)

    @property
    def patch_dim(self) -> int:
        side = self.grid_extent // GRID
        return self.feature_channels * side * side


def _pooled_extent(n: int) -> int:
    return n - n % GRID


def pool_to_grid(x: Tensor) -> Tensor:
    """Stride-1 average pooling that trims H and W down to a multiple of three."""
    _, h, w = x.shape
    if h % GRID != w % GRID:
        raise ShapeError(f"cannot pool {h}x{w} to a multiple of {GRID} with one square window")
    r = h % GRID
    return x if r == 0 else T.avg_pool2d(x, r + 1, stride=1)


def patchify(x: Tensor) -> Tensor:
    """C x H x W -> 9 x (C*H/3*W/3); row-major tiling, each patch flattened C-major."""
    if x.data.ndim != 3:
        raise ShapeError(f"patchify expects C x H x W, got {x.shape}")
    c, h, w = x.shape
    if h < GRID or w < GRID:
        raise ShapeError(f"patchify needs extents of at least {GRID}, got {h}x{w}")
    if h % GRID or w % GRID:
        raise ShapeError(f"patchify needs extents divisible by {GRID}, got {h}x{w}")
    ph, pw = h // GRID, w // GRID
    t = T.reshape(x, (c, GRID, ph, GRID, pw))
    t = T.transpose(t, (1, 3, 0, 2, 4))
    return T.reshape(t, (SEQ, c * ph * pw))


def unpatchify(patches: Tensor, channels: int, height: int, width: int) -> Tensor:
    ph, pw = height // GRID, width // GRID
    t = T.reshape(patches, (GRID, GRID, channels, ph, pw))
    t = T.transpose(t, (2, 0, 3, 1, 4))
    return T.reshape(t, (channels, height, width))


def init_temporal(cfg: TemporalConfig, rng: np.random.Generator,
                  prefix: str = "temporal") -> dict[str, Tensor]:
    c, d = cfg.embed_dim, cfg.patch_dim

    def normal(shape, std):
        return Tensor(rng.standard_normal(shape) * std, requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    return {
        f"{prefix}/conv/weight": normal((cfg.feature_channels, cfg.in_channels, 3, 3),
                                        np.sqrt(2.0 / (cfg.in_channels * 9))),
        f"{prefix}/conv/bias": zeros(cfg.feature_channels),
        f"{prefix}/embed/weight": normal((d, c), np.sqrt(1.0 / d)),
        f"{prefix}/embed/position": normal((SEQ, c), 0.02),
        f"{prefix}/class_token": normal((1, c), 0.02),
        f"{prefix}/attn/query": normal((c, c), np.sqrt(1.0 / c)),
        f"{prefix}/attn/key": normal((c, c), np.sqrt(1.0 / c)),
        f"{prefix}/attn/value": normal((c, c), np.sqrt(1.0 / c)),
        f"{prefix}/mlp/w1": normal((c, cfg.mlp_dim), np.sqrt(2.0 / c)),
        f"{prefix}/mlp/b1": zeros(cfg.mlp_dim),
        f"{prefix}/mlp/w2": normal((cfg.mlp_dim, c), np.sqrt(1.0 / cfg.mlp_dim)),
        f"{prefix}/mlp/b2": zeros(c),
        f"{prefix}/template": normal((c, 1), np.sqrt(1.0 / c)),
    }


def residual_features(residual: Tensor, params: dict[str, Tensor], cfg: TemporalConfig,
                      prefix: str = "temporal") -> Tensor:
    """2 x H x W residual -> C_f x G x G grid with G divisible by three."""
    h = T.relu(T.conv2d(residual, params[f"{prefix}/conv/weight"], pad=1,
                        bias=params[f"{prefix}/conv/bias"]))
    if cfg.pre_pool > 1:
        h = T.avg_pool2d(h, cfg.pre_pool)
    return pool_to_grid(h)


def embed_patches(patches: Tensor, params: dict[str, Tensor],
                  prefix: str = "temporal") -> Tensor:
    w = params[f"{prefix}/embed/weight"]
    if patches.shape != (SEQ, w.shape[0]):
        raise ShapeError(f"patch matrix {patches.shape} does not fit embedding {w.shape}")
    return T.add(T.matmul(patches, w), params[f"{prefix}/embed/position"])


def encode(x: Tensor, class_token: Tensor, params: dict[str, Tensor],
           prefix: str = "temporal") -> tuple[Tensor, Tensor]:
    """One pre-norm-free encoder layer over [class token; patches].

    Returns the 10 x C latent and the 10 x 10 attention weights.
    """
    if class_token.shape != (1, x.shape[1]):
        raise ShapeError(f"class token {class_token.shape} does not match embedding {x.shape}")
    z = T.concat([class_token, x], axis=0)
    c = z.shape[1]
    q = T.matmul(z, params[f"{prefix}/attn/query"])
    k = T.matmul(z, params[f"{prefix}/attn/key"])
    v = T.matmul(z, params[f"{prefix}/attn/value"])
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(c))
    attn = T.softmax(scores, axis=1)
    z = T.add(z, T.matmul(attn, v))
    hidden = T.relu(T.bias_add(T.matmul(z, params[f"{prefix}/mlp/w1"]), params[f"{prefix}/mlp/b1"]))
    z = T.add(z, T.bias_add(T.matmul(hidden, params[f"{prefix}/mlp/w2"]), params[f"{prefix}/mlp/b2"]))
    return z, attn


def template_attention(latent: Tensor, template: Tensor) -> Tensor:
    """Softmax over the nine patch rows of their dot product with the template, as 3x3."""
    if latent.shape[0] != SEQ + 1 or template.shape != (latent.shape[1], 1):
        raise ShapeError(f"template {template.shape} does not fit latent {latent.shape}")
    scores = T.matmul(T.take(latent, 1, SEQ + 1), template)
    return T.reshape(T.softmax(scores, axis=0), (GRID, GRID))


def apply_temporal_attention(deep: Tensor, attention: Tensor) -> Tensor:
    c, h, w = deep.shape
    if attention.shape != (GRID, GRID):
        raise ShapeError(f"temporal map must be {GRID}x{GRID}, got {attention.shape}")
    if h % GRID or w % GRID or h != w:
        raise ShapeError(f"deep features {h}x{w} are not a square multiple of {GRID}")
    up = T.upsample_nearest(attention, h // GRID)
    return T.mul(deep, T.broadcast_channels(up, c))


def temporal_path(residual: Tensor, params: dict[str, Tensor], cfg: TemporalConfig,
                  prefix: str = "temporal") -> tuple[Tensor, Tensor]:
    """Residual -> (3x3 attention map, class-token latent of width C)."""
    grid = residual_features(residual, params, cfg, prefix)
    tokens = embed_patches(patchify(grid), params, prefix)
    latent, _ = encode(tokens, params[f"{prefix}/class_token"], params, prefix)
    attention = template_attention(latent, params[f"{prefix}/template"])
    return attention, T.reshape(T.take(latent, 0, 1), (latent.shape[1],))
