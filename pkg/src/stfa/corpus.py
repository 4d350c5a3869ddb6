"""Synthetic real/fake clip pairs with known artifacts, plus manifest I/O.

Real clips render a procedural scene (gradient background plus coloured
Gaussian blobs) along a smooth sub-pixel translation path. Each fake re-renders
its real twin's scene with per-frame jitter, adds per-frame brightness flicker
and re-textures a fixed "face" rectangle independently in every frame.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .imageio import read_netpbm, write_netpbm

REAL, FAKE = 0, 1
SPLITS = ("train", "val")


@dataclass
class Scene:
    background: np.ndarray  # 3 x 3: per channel (offset, x slope, y slope)
    centers: np.ndarray     # K x 2 (x, y)
    sigmas: np.ndarray      # K
    colors: np.ndarray      # K x 3

    def render(self, h: int, w: int, dx: float = 0.0, dy: float = 0.0) -> np.ndarray:
        y, x = np.mgrid[0:h, 0:w].astype(np.float64)
        xs, ys = x - dx, y - dy
        img = (self.background[:, 0]
               + xs[..., None] * self.background[:, 1] / w
               + ys[..., None] * self.background[:, 2] / h)
        for (cx, cy), s, c in zip(self.centers, self.sigmas, self.colors):
            g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * s * s))
            img = img + g[..., None] * c
        return np.clip(img, 0.0, 1.0)


@dataclass
class VideoClip:
    frames: list
    label: int
    id: str
    split: str = "train"
    # generator state needed to re-render a fake twin; never serialised
    scene: Scene | None = field(default=None, repr=False, compare=False)
    path: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.frames) < 3:
            raise DataError(f"clip {self.id!r} has {len(self.frames)} frames; need at least 3")
        shape = np.shape(self.frames[0])
        if any(np.shape(f) != shape for f in self.frames):
            raise DataError(f"clip {self.id!r} has frames of differing extents")
        if self.label not in (REAL, FAKE):
            raise DataError(f"clip {self.id!r}: label must be 0 or 1, got {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"clip {self.id!r}: unknown split {self.split!r}")

    @property
    def extents(self) -> tuple[int, int]:
        return tuple(np.shape(self.frames[0])[:2])


@dataclass(frozen=True)
class CorpusSpec:
    clips_per_class: int = 100
    frames: int = 8
    height: int = 32
    width: int = 32
    motion: float = 0.5    # max smooth speed, px/frame
    flicker: float = 0.04  # per-frame additive brightness, +/- amplitude
    jitter: float = 1.0    # per-frame offset, +/- px
    patch: int = 8         # side of the re-textured face rectangle, 0 disables
    blobs: int = 12
    seed: int = 0
    ratio: float = 0.8

    def __post_init__(self):
        if min(self.motion, self.flicker, self.jitter) < 0 or self.patch < 0:
            raise ValueError("amplitudes and patch size must be non-negative")
        if self.frames < 3:
            raise ValueError("clips need at least 3 frames")
        if self.patch > min(self.height, self.width):
            raise ValueError("tamper patch larger than the frame")
        if not 0 < self.ratio < 1:
            raise ValueError("split ratio must lie strictly in (0, 1)")

    def face_box(self) -> tuple[int, int, int, int]:
        """(row0, col0, row1, col1) of the tampered region, slightly above centre."""
        r0 = max(0, (self.height - self.patch) // 2 - self.height // 8)
        c0 = (self.width - self.patch) // 2
        return r0, c0, r0 + self.patch, c0 + self.patch


def clip_rng(seed: int, pair: int, label: int) -> np.random.Generator:
    """Independent stream per clip, so clips can be generated in any order."""
    return np.random.default_rng([seed, pair, label])


def _random_scene(spec: CorpusSpec, rng: np.random.Generator) -> Scene:
    h, w = spec.height, spec.width
    background = np.column_stack([
        rng.uniform(0.2, 0.5, 3), rng.uniform(-0.2, 0.2, 3), rng.uniform(-0.2, 0.2, 3)])
    margin = 0.25 * max(h, w)
    centers = np.column_stack([rng.uniform(-margin, w + margin, spec.blobs),
                               rng.uniform(-margin, h + margin, spec.blobs)])
    sigmas = rng.uniform(1.5, 4.0, spec.blobs)
    colors = rng.uniform(-0.35, 0.45, (spec.blobs, 3))
    return Scene(background, centers, sigmas, colors)


def _smooth_path(spec: CorpusSpec, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(spec.frames, dtype=np.float64)
    speed = rng.uniform(0.0, spec.motion)
    heading = rng.uniform(0, 2 * np.pi)
    wobble = rng.uniform(0.0, 0.5 * spec.motion, 2)
    phase = rng.uniform(0, 2 * np.pi, 2)
    period = 2.0 * spec.frames
    dx = speed * np.cos(heading) * t + wobble[0] * np.sin(2 * np.pi * t / period + phase[0])
    dy = speed * np.sin(heading) * t + wobble[1] * np.sin(2 * np.pi * t / period + phase[1])
    return np.column_stack([dx - dx[0], dy - dy[0]])


def generate_real_clip(spec: CorpusSpec, rng: np.random.Generator, clip_id: str = "real",
                       split: str = "train") -> VideoClip:
    scene = _random_scene(spec, rng)
    path = _smooth_path(spec, rng)
    frames = [scene.render(spec.height, spec.width, dx, dy) for dx, dy in path]
    return VideoClip(frames, REAL, clip_id, split, scene=scene, path=path)


def generate_fake_clip(twin: VideoClip, spec: CorpusSpec, rng: np.random.Generator,
                       clip_id: str = "fake") -> VideoClip:
    if twin.scene is None or twin.path is None:
        raise ValueError("fake generation needs a generated real twin (scene and path)")
    h, w = twin.extents
    r0, c0, r1, c1 = spec.face_box()
    frames = []
    for k, (dx, dy) in enumerate(twin.path):
        offset = rng.uniform(-spec.jitter, spec.jitter, 2) if spec.jitter > 0 else np.zeros(2)
        if spec.jitter > 0:
            frame = twin.scene.render(h, w, dx + offset[0], dy + offset[1])
        else:
            frame = np.array(twin.frames[k], dtype=np.float64)
        if spec.flicker > 0:
            frame = frame + rng.uniform(-spec.flicker, spec.flicker)
        if spec.patch > 0:
            region = frame[r0:r1, c0:c1]
            noise = rng.uniform(-0.25, 0.25, region.shape[:2])[..., None]
            frame[r0:r1, c0:c1] = region.mean(axis=(0, 1)) + noise
        frames.append(np.clip(frame, 0.0, 1.0))
    return VideoClip(frames, FAKE, clip_id, twin.split, scene=twin.scene, path=twin.path)


def split_pairs(n_pairs: int, ratio: float, rng: np.random.Generator) -> list[str]:
    """Exact partition: round(ratio * n) train entries, the rest val."""
    n_train = int(round(ratio * n_pairs))
    order = rng.permutation(n_pairs)
    splits = ["val"] * n_pairs
    for i in order[:n_train]:
        splits[i] = "train"
    return splits


def generate_corpus(spec: CorpusSpec) -> list[VideoClip]:
    """Real/fake twins in pair order: [real_0, fake_0, real_1, fake_1, ...].

    Twins always share a split so no scene leaks across the partition.
    """
    splits = split_pairs(spec.clips_per_class, spec.ratio, np.random.default_rng([spec.seed]))
    clips = []
    for i in range(spec.clips_per_class):
        real = generate_real_clip(spec, clip_rng(spec.seed, i, REAL), f"pair{i:04d}_real", splits[i])
        fake = generate_fake_clip(real, spec, clip_rng(spec.seed, i, FAKE), f"pair{i:04d}_fake")
        clips.extend([real, fake])
    return clips


# --- manifest ----------------------------------------------------------------

def frame_name(k: int) -> str:
    return f"frame_{k:04d}.ppm"


def write_clip(clip: VideoClip, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(clip.frames):
        f = np.asarray(frame)
        write_netpbm(directory / frame_name(k), f if f.ndim == 3 else np.repeat(f[..., None], 3, 2))
    return directory


def read_clip(directory: str | Path, label: int = REAL, split: str = "train") -> VideoClip:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"clip directory {directory} does not exist")
    frames = []
    while (directory / frame_name(len(frames))).exists():
        frames.append(read_netpbm(directory / frame_name(len(frames))))
    if not frames:
        raise DataError(f"clip directory {directory} holds no {frame_name(0)}")
    stray = sorted(p.name for p in directory.glob("frame_*.ppm")
                   if p.name not in {frame_name(k) for k in range(len(frames))})
    if stray:
        raise DataError(f"clip directory {directory}: frame sequence has a gap before {stray[0]}")
    return VideoClip(frames, label, directory.name, split)


def write_manifest(corpus: list[VideoClip], path: str | Path) -> Path:
    """Write every clip beside the manifest and a ``clip_dir,label,split`` CSV."""
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for clip in corpus:
        write_clip(clip, root / clip.id)
        rows.append((clip.id, clip.label, clip.split))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_dir", "label", "split"])
        writer.writerows(rows)
    return path


def load_manifest(path: str | Path) -> list[VideoClip]:
    """Load every clip listed in the manifest; clip_dir is relative to the manifest."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    clips = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["clip_dir", "label", "split"]:
            raise DataError(f"{path}: header must be clip_dir,label,split, got {header}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{path} row {row_no}: expected 3 columns, got {len(row)}")
            clip_dir, label, split = row
            if label not in ("0", "1"):
                raise DataError(f"{path} row {row_no}: label must be 0 or 1, got {label!r}")
            if split not in SPLITS:
                raise DataError(f"{path} row {row_no}: split must be train or val, got {split!r}")
            try:
                clips.append(read_clip(path.parent / clip_dir, int(label), split))
            except DataError as exc:
                raise DataError(f"{path} row {row_no}: {exc}") from exc
    if not clips:
        raise DataError(f"{path}: manifest lists no clips")
    return clips
