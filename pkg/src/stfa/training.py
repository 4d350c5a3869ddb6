"""Training with MSE on sigmoid scores, SGD, early stopping; clip-level inference."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .corpus import FAKE, REAL, VideoClip, split_pairs
from .detector import ModelConfig, forward, init_params
from .errors import DataError, NumericalAbort
from .evaluation import evaluate
from .flow import clip_flows, motion_residual
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 80
    patience: int = 10
    lr: float = 0.05
    batch_size: int = 8
    frames_per_clip: int = 1
    split_ratio: float = 0.8
    threshold: float = 0.5
    lookahead: int = 2
    flow_alpha: float = 1.0
    flow_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError("split ratio must lie strictly in (0, 1)")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience, max_epochs and batch_size must be >= 1")
        if self.lookahead < 1 or self.frames_per_clip < 1:
            raise ValueError("lookahead and frames_per_clip must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class ClipSamples:
    """Per-clip model inputs: one (frame, residual) pair per usable target frame."""

    id: str
    label: int
    split: str
    frames: list[Tensor]
    residuals: list[Tensor]

    def __len__(self) -> int:
        return len(self.frames)


def prepare_clip(clip: VideoClip, lookahead: int = 2, alpha: float = 1.0,
                 iters: int = 200) -> ClipSamples:
    """Target frame t pairs with the mean residual of pairs (t, t+1) ... (t+n-1, t+n)."""
    n_frames = len(clip.frames)
    if n_frames < lookahead + 1:
        raise DataError(f"clip {clip.id!r} has {n_frames} frames; need at least {lookahead + 1}")
    residuals = [motion_residual(p, f).stacked() for p, f in clip_flows(clip.frames, alpha, iters)]
    frames, res = [], []
    for t in range(n_frames - lookahead):
        frame = np.asarray(clip.frames[t], dtype=np.float64)
        if frame.ndim == 2:
            frame = np.repeat(frame[..., None], 3, axis=2)
        frames.append(Tensor(np.transpose(frame, (2, 0, 1))))
        res.append(Tensor(np.mean(residuals[t:t + lookahead], axis=0)))
    return ClipSamples(clip.id, clip.label, clip.split, frames, res)


def prepare(clips, tcfg: TrainConfig) -> list[ClipSamples]:
    return [prepare_clip(c, tcfg.lookahead, tcfg.flow_alpha, tcfg.flow_iters) for c in clips]


def frame_scores(samples: ClipSamples, params, mcfg: ModelConfig) -> list[float]:
    return [forward(f, r, params, mcfg).item() for f, r in zip(samples.frames, samples.residuals)]


def predict_clip(samples: ClipSamples, params, mcfg: ModelConfig) -> float:
    """Mean of the per-frame scores over every usable target frame."""
    if len(samples) == 0:
        raise DataError(f"clip {samples.id!r} has no usable frames")
    return float(np.mean(frame_scores(samples, params, mcfg)))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float | None
    val_auc: float | None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False

    def log_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.log]


def _ensure_splits(samples: list[ClipSamples], tcfg: TrainConfig) -> None:
    """Clips without a val split are re-partitioned by class at the configured ratio."""
    if any(s.split == "val" for s in samples):
        return
    rng = np.random.default_rng([tcfg.seed, 1])
    for label in (REAL, FAKE):
        group = [s for s in samples if s.label == label]
        for s, split in zip(group, split_pairs(len(group), tcfg.split_ratio, rng)):
            s.split = split


def validate(val: list[ClipSamples], params, mcfg: ModelConfig, threshold: float):
    losses, clip_scores, labels = [], [], []
    for s in val:
        scores = frame_scores(s, params, mcfg)
        losses.extend((x - s.label) ** 2 for x in scores)
        clip_scores.append(float(np.mean(scores)))
        labels.append(s.label)
    report = evaluate(clip_scores, labels, threshold)
    return float(np.mean(losses)), report


def train(samples: list[ClipSamples], mcfg: ModelConfig, tcfg: TrainConfig,
          params: dict[str, Tensor] | None = None) -> TrainResult:
    """Minibatch SGD on per-frame MSE; returns the best-validation checkpoint."""
    if {s.label for s in samples} != {REAL, FAKE}:
        raise DataError("training corpus must contain both real and fake clips")
    _ensure_splits(samples, tcfg)
    train_set = [s for s in samples if s.split == "train"]
    val_set = [s for s in samples if s.split == "val"]
    if not train_set:
        raise DataError("need at least one training clip")
    if not val_set:
        # tiny corpora (one clip per class) leave the val side empty
        log.warning("no validation clips; validating on the training clips")
        val_set = train_set
    if {s.label for s in train_set} != {REAL, FAKE}:
        raise DataError("training split must contain both real and fake clips")

    params = dict(init_params(mcfg) if params is None else params)
    rng = np.random.default_rng([tcfg.seed, 2])
    best = Checkpoint(dict(params), mcfg, 0, math.inf)
    history: list[EpochRecord] = []
    wait = 0
    stopped = False

    for epoch in range(1, tcfg.max_epochs + 1):
        picks = [(ci, int(t)) for ci in range(len(train_set))
                 for t in rng.choice(len(train_set[ci]), size=min(tcfg.frames_per_clip, len(train_set[ci])),
                                     replace=False)]
        order = rng.permutation(len(picks))
        epoch_losses = []
        for b0 in range(0, len(order), tcfg.batch_size):
            batch = order[b0:b0 + tcfg.batch_size]
            for p in params.values():
                p.zero_grad()
            for idx in batch:
                ci, t = picks[idx]
                s = train_set[ci]
                with Tape() as tape:
                    score = forward(s.frames[t], s.residuals[t], params, mcfg)
                    loss = T.mse_loss(score, Tensor(float(s.label)))
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalAbort(
                        f"non-finite loss {value} at epoch {epoch}, clip {s.id!r}, frame {t}; "
                        f"lr={tcfg.lr}")
                tape.backward(loss)
                epoch_losses.append(value)
            step = tcfg.lr / len(batch)
            params = {k: p if p.grad is None else Tensor(p.data - step * p.grad, requires_grad=True)
                      for k, p in params.items()}
        val_loss, report = validate(val_set, params, mcfg, tcfg.threshold)
        if not math.isfinite(val_loss):
            raise NumericalAbort(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(epoch, float(np.mean(epoch_losses)), val_loss, report.accuracy, report.auc)
        history.append(rec)
        log.info("epoch %d train %.5f val %.5f acc %s auc %s", epoch, rec.train_loss, val_loss,
                 report.accuracy, report.auc)
        if val_loss < best.best_val_loss:
            best = Checkpoint(dict(params), mcfg, epoch, val_loss)
            wait = 0
        else:
            wait += 1
            if wait >= tcfg.patience:
                stopped = True
                break
    return TrainResult(best, history, stopped)
