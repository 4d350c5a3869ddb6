"""Brightness-constancy optical flow and the temporal signals derived from it.

Linearising I(x, y, t) = I(x + dx, y + dy, t + dt) gives the per-pixel
constraint Ix*u + Iy*v + It = 0, one equation in two unknowns. The
Horn-Schunck solver closes it with an alpha-weighted smoothness prior and
Jacobi iterations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FramePair:
    prev: np.ndarray
    next: np.ndarray

    def __post_init__(self):
        prev = np.clip(np.asarray(self.prev, dtype=np.float64), 0.0, 1.0)
        nxt = np.clip(np.asarray(self.next, dtype=np.float64), 0.0, 1.0)
        if prev.ndim != 2 or prev.shape != nxt.shape:
            raise ShapeError(f"frame pair needs two equal 2-d frames, got {prev.shape} and {nxt.shape}")
        object.__setattr__(self, "prev", prev)
        object.__setattr__(self, "next", nxt)

    @classmethod
    def from_frames(cls, prev: np.ndarray, nxt: np.ndarray) -> "FramePair":
        return cls(to_gray(prev), to_gray(nxt))


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class MotionResidual:
    """Two non-negative channels: |next - prev| and flow magnitude."""

    difference: np.ndarray
    flow_magnitude: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return self.difference + self.flow_magnitude

    def stacked(self) -> np.ndarray:
        return np.stack([self.difference, self.flow_magnitude])


def to_gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        return frame @ LUMA
    return frame


def neighbor_average(f: np.ndarray) -> np.ndarray:
    """Mean of the 4-neighbours, with edge-reflected borders."""
    acc = np.empty_like(f)
    acc[..., 1:, :] = f[..., :-1, :]
    acc[..., 0, :] = f[..., 0, :]
    acc[..., :-1, :] += f[..., 1:, :]
    acc[..., -1, :] += f[..., -1, :]
    acc[..., 1:] += f[..., :-1]
    acc[..., 0] += f[..., 0]
    acc[..., :-1] += f[..., 1:]
    acc[..., -1] += f[..., -1]
    return 0.25 * acc


def image_derivatives(pair: FramePair) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spatial derivatives averaged over both frames, and the temporal difference."""
    return _derivatives(pair.prev, pair.next)


def _derivatives(prev: np.ndarray, nxt: np.ndarray):
    h, w = prev.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"derivatives need at least 2x2 frames, got {h}x{w}")
    gy0, gx0 = np.gradient(prev, axis=(-2, -1))
    gy1, gx1 = np.gradient(nxt, axis=(-2, -1))
    return 0.5 * (gx0 + gx1), 0.5 * (gy0 + gy1), nxt - prev


def _data_term(ix, iy, it, u, v):
    r = ix * u + iy * v + it
    return r * r


def _smoothness(f: np.ndarray) -> float:
    # the 4-neighbour stencil of the Jacobi update corresponds to this weighting
    return 0.25 * (np.sum(np.diff(f, axis=0) ** 2) + np.sum(np.diff(f, axis=1) ** 2))


def flow_energy(pair: FramePair, flow: FlowField, alpha: float) -> float:
    """Global Horn-Schunck energy minimised by :func:`horn_schunck`."""
    ix, iy, it = image_derivatives(pair)
    data = np.sum(_data_term(ix, iy, it, flow.u, flow.v))
    return float(data + alpha ** 2 * (_smoothness(flow.u) + _smoothness(flow.v)))


def horn_schunck(pair: FramePair, alpha: float = 1.0, iters: int = 200,
                 trace: list | None = None) -> FlowField:
    """Jacobi iterations of the Horn-Schunck update from a zero initial flow.

    Each sweep is a block-Jacobi step on the quadratic energy, so the energy
    never increases. With ``trace`` the energy before the first sweep and
    after every sweep is appended.
    """
    _check_solver_args(alpha, iters)
    ix, iy, it = image_derivatives(pair)
    if trace is None:
        u, v = _jacobi(ix, iy, it, alpha, iters)
        return FlowField(u, v)
    denom = alpha ** 2 + ix * ix + iy * iy
    u = np.zeros_like(ix)
    v = np.zeros_like(ix)
    if trace is not None:
        trace.append(flow_energy(pair, FlowField(u, v), alpha))
    for _ in range(int(iters)):
        ub = neighbor_average(u)
        vb = neighbor_average(v)
        t = (ix * ub + iy * vb + it) / denom
        u = ub - ix * t
        v = vb - iy * t
        if trace is not None:
            trace.append(flow_energy(pair, FlowField(u, v), alpha))
    return FlowField(u, v)


def _check_solver_args(alpha, iters):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if int(iters) != iters or iters < 1:
        raise ValueError(f"iters must be a positive integer, got {iters}")


def _jacobi(ix, iy, it, alpha, iters):
    denom = alpha ** 2 + ix * ix + iy * iy
    u = np.zeros_like(ix)
    v = np.zeros_like(ix)
    for _ in range(int(iters)):
        ub = neighbor_average(u)
        vb = neighbor_average(v)
        t = (ix * ub + iy * vb + it) / denom
        u = ub - ix * t
        v = vb - iy * t
    return u, v


def clip_flows(frames, alpha: float = 1.0, iters: int = 200) -> list[tuple[FramePair, FlowField]]:
    """Horn-Schunck flow for every consecutive pair of a clip, solved as one batch.

    Identical to calling :func:`horn_schunck` pair by pair; the pixels of
    different pairs never interact.
    """
    _check_solver_args(alpha, iters)
    gray = np.stack([np.clip(to_gray(f), 0.0, 1.0) for f in frames])
    if gray.shape[0] < 2:
        raise ShapeError("a clip needs at least two frames for flow")
    ix, iy, it = _derivatives(gray[:-1], gray[1:])
    u, v = _jacobi(ix, iy, it, alpha, iters)
    return [(FramePair(gray[k], gray[k + 1]), FlowField(u[k], v[k])) for k in range(len(u))]


def motion_residual(pair: FramePair, flow: FlowField) -> MotionResidual:
    if flow.u.shape != pair.prev.shape or flow.v.shape != pair.prev.shape:
        raise ShapeError(f"flow extents {flow.u.shape} do not match frames {pair.prev.shape}")
    return MotionResidual(np.abs(pair.next - pair.prev), flow.magnitude)


def incoherence_score(flow: FlowField) -> float:
    """Mean squared deviation of each flow vector from its 4-neighbour average."""
    if flow.u.ndim != 2 or min(flow.u.shape) < 2:
        raise ShapeError(f"incoherence needs a flow field of at least 2x2, got {flow.u.shape}")
    du = flow.u - neighbor_average(flow.u)
    dv = flow.v - neighbor_average(flow.v)
    return float(np.mean(du * du + dv * dv))


def extract_slice(frames, axis: str, index: int) -> np.ndarray:
    """Stack one row (or column) of every frame into a frames x extent image."""
    frames = [to_gray(f) for f in frames]
    if not frames:
        raise ShapeError("cannot slice an empty clip")
    h, w = frames[0].shape
    if axis == "row":
        limit = h
    elif axis == "column":
        limit = w
    else:
        raise ValueError(f"axis must be 'row' or 'column', got {axis!r}")
    if not 0 <= index < limit:
        raise IndexError(f"{axis} index {index} outside [0, {limit})")
    if axis == "row":
        return np.stack([f[index, :] for f in frames])
    return np.stack([f[:, index] for f in frames])


def slice_roughness(sl: np.ndarray) -> float:
    """Mean absolute difference between consecutive slice rows (0 for one row)."""
    if sl.shape[0] < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(sl, axis=0))))
