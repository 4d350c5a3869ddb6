"""Two-stream detector: spatial attention backbone fused with temporal attention.

Spatial stream: frame -> dense block -> spatial attention -> residual blocks
-> pool to a 3x3-divisible grid. Temporal stream: motion residual -> patch
attention, giving a 3x3 map and a class-token latent. The map re-weights the
deep spatial grid, which is globally averaged, concatenated with the latent,
and mapped to a score by a linear layer and a sigmoid.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .spatial import apply_spatial_attention, init_spatial_attention, spatial_attention_maps
from .temporal import (GRID, TemporalConfig, apply_temporal_attention, init_temporal,
                       pool_to_grid, temporal_path)
from .tensor import Tensor
from .texture import DenseBlockConfig, dense_block_forward, init_dense_block


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 32
    in_channels: int = 3
    dense: DenseBlockConfig = field(default_factory=DenseBlockConfig)
    backbone: tuple[tuple[int, int], ...] = ((16, 2), (32, 2), (64, 2))
    attention_maps: int = 4
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    temporal_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.dense.in_channels != self.in_channels:
            raise ValueError("dense block input channels must equal frame channels")
        if self.temporal.input_size != self.input_size:
            raise ValueError("temporal input size must equal frame size")
        if self.input_size < 1 or self.attention_maps < 1:
            raise ValueError("extents and map count must be positive")
        if any(c < 1 or s < 1 for c, s in self.backbone):
            raise ValueError(f"invalid backbone blocks {self.backbone}")
        size = self.input_size
        for _, s in self.backbone:
            if size % s:
                raise ValueError(f"backbone stride {s} does not divide extent {size}")
            size //= s
        if size < GRID:
            raise ValueError(f"backbone output {size}x{size} is smaller than the 3x3 attention grid")

    @property
    def deep_channels(self) -> int:
        return self.backbone[-1][0]

    @property
    def fused_width(self) -> int:
        return self.deep_channels + self.temporal.embed_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = [list(b) for b in self.backbone]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["dense"] = DenseBlockConfig(**d["dense"])
        d["temporal"] = TemporalConfig(**d["temporal"])
        d["backbone"] = tuple(tuple(int(v) for v in b) for b in d["backbone"])
        return cls(**d)


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    """Deterministic parameter set for ``cfg``, keyed by canonical path."""
    rng = np.random.default_rng(cfg.seed)
    params = init_dense_block(cfg.dense, rng)
    params.update(init_spatial_attention(cfg.dense.out_channels, cfg.attention_maps, rng))
    c_in = cfg.dense.out_channels
    for i, (c_out, _) in enumerate(cfg.backbone):
        p = f"backbone/block{i}"
        params[f"{p}/conv1/weight"] = Tensor(
            rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / (9 * c_in)), requires_grad=True)
        params[f"{p}/conv1/bias"] = Tensor(np.zeros(c_out), requires_grad=True)
        params[f"{p}/conv2/weight"] = Tensor(
            rng.standard_normal((c_out, c_out, 3, 3)) * np.sqrt(1.0 / (9 * c_out)), requires_grad=True)
        params[f"{p}/conv2/bias"] = Tensor(np.zeros(c_out), requires_grad=True)
        params[f"{p}/shortcut/weight"] = Tensor(
            rng.standard_normal((c_out, c_in, 1, 1)) * np.sqrt(1.0 / c_in), requires_grad=True)
        params[f"{p}/shortcut/bias"] = Tensor(np.zeros(c_out), requires_grad=True)
        c_in = c_out
    params.update(init_temporal(cfg.temporal, rng))
    params["head/weight"] = Tensor(rng.standard_normal((cfg.fused_width, 1)) * 0.01, requires_grad=True)
    params["head/bias"] = Tensor(np.zeros(1), requires_grad=True)
    return dict(sorted(params.items()))


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {k: v.shape for k, v in init_params(cfg).items()}


@contextmanager
def _stage(name: str):
    try:
        yield
    except ShapeError as exc:
        raise ShapeError(f"[{name}] {exc}") from exc
    except KeyError as exc:
        raise ShapeError(f"[{name}] missing parameter {exc}") from exc


def residual_block(x: Tensor, params: dict[str, Tensor], prefix: str, stride: int) -> Tensor:
    """Two 3x3 convs plus a 1x1 projection shortcut; downsampling by average pooling."""
    if stride > 1:
        x = T.avg_pool2d(x, stride)
    h = T.relu(T.conv2d(x, params[f"{prefix}/conv1/weight"], pad=1, bias=params[f"{prefix}/conv1/bias"]))
    h = T.conv2d(h, params[f"{prefix}/conv2/weight"], pad=1, bias=params[f"{prefix}/conv2/bias"])
    sc = T.conv2d(x, params[f"{prefix}/shortcut/weight"], bias=params[f"{prefix}/shortcut/bias"])
    return T.relu(T.add(h, sc))


def as_frame_tensor(frame) -> Tensor:
    """H x W x 3 (or H x W) image array -> C x H x W tensor."""
    if isinstance(frame, Tensor):
        return frame
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return Tensor(np.transpose(a, (2, 0, 1)))


@dataclass
class ForwardTrace:
    score: Tensor
    spatial_maps: Tensor
    temporal_map: Tensor


def forward(frame, residual, params: dict[str, Tensor], cfg: ModelConfig,
            trace: bool = False):
    """Fake-probability for one frame and its motion residual (2 x H x W)."""
    x = as_frame_tensor(frame)
    r = residual if isinstance(residual, Tensor) else Tensor(residual)
    n = cfg.input_size
    with _stage("input"):
        if x.shape != (cfg.in_channels, n, n):
            raise ShapeError(f"frame must be {cfg.in_channels}x{n}x{n}, got {x.shape}")
        if r.shape != (cfg.temporal.in_channels, n, n):
            raise ShapeError(f"residual must be {cfg.temporal.in_channels}x{n}x{n}, got {r.shape}")
    with _stage("texture-enhancement"):
        texture = dense_block_forward(x, cfg.dense, params)
    with _stage("spatial-attention"):
        maps = spatial_attention_maps(texture, params, cfg.attention_maps)
        h = apply_spatial_attention(texture, maps)
    with _stage("backbone"):
        for i, (_, stride) in enumerate(cfg.backbone):
            h = residual_block(h, params, f"backbone/block{i}", stride)
        deep = pool_to_grid(h)
    with _stage("temporal-attention"):
        if cfg.temporal_enabled:
            tmap, token = temporal_path(r, params, cfg.temporal)
        else:
            tmap = Tensor(np.full((GRID, GRID), 1.0 / (GRID * GRID)))
            token = Tensor(np.zeros(cfg.temporal.embed_dim))
        guided = apply_temporal_attention(deep, tmap)
    with _stage("fusion"):
        pooled = T.mean(guided, axis=(1, 2))
        fused = T.reshape(T.concat([pooled, token], axis=0), (1, cfg.fused_width))
        logit = T.bias_add(T.matmul(fused, params["head/weight"]), params["head/bias"])
        score = T.reshape(T.sigmoid(logit), ())
    if trace:
        return ForwardTrace(score, maps, tmap)
    return score
