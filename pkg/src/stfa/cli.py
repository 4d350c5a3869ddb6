"""Command-line entry point: ``stfa <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
Diagnostics go to stderr; stdout carries only the path of the summary JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import CorpusSpec, generate_corpus, load_manifest, read_clip, write_manifest
from .detector import ModelConfig, forward
from .errors import DataError, NumericalAbort, ShapeError
from .evaluation import evaluate
from .flow import FramePair, extract_slice, horn_schunck, incoherence_score, slice_roughness
from .imageio import read_netpbm, write_netpbm
from .training import TrainConfig, predict_clip, prepare, prepare_clip, train

log = logging.getLogger("stfa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("STFA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STFA_SEED must be an integer, got {env!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_run(out: Path, args, **resolved) -> None:
    echo = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    _write_json(out / "run.json", {"version": __version__, "args": echo, **resolved})


def _flow_settings(args) -> TrainConfig:
    return TrainConfig(lookahead=args.lookahead, flow_alpha=args.alpha, flow_iters=args.iters)


def _minmax(img: np.ndarray) -> np.ndarray:
    lo, hi = float(img.min()), float(img.max())
    return np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)


# --- subcommands -------------------------------------------------------------------

def cmd_gen_corpus(args) -> Path:
    if args.clips < 2 or args.clips % 2:
        raise UsageError("--clips counts real and fake clips together and must be even and >= 2")
    h, w = args.size
    spec = CorpusSpec(clips_per_class=args.clips // 2, frames=args.frames, height=h, width=w,
                      motion=args.motion, flicker=args.flicker, jitter=args.jitter,
                      patch=args.patch, seed=args.seed, ratio=args.ratio)
    out = _out_dir(args.out)
    _record_run(out, args, corpus_spec=asdict(spec))
    clips = generate_corpus(spec)
    manifest = write_manifest(clips, out / "manifest.csv")
    summary = {
        "manifest": manifest.name,
        "clips": len(clips),
        "train": sum(c.split == "train" for c in clips),
        "val": sum(c.split == "val" for c in clips),
        "face_box": list(spec.face_box()),
    }
    return _write_json(out / "corpus.json", summary)


def cmd_train(args) -> Path:
    mcfg = ModelConfig(temporal_enabled=not args.no_temporal, seed=args.seed)
    tcfg = TrainConfig(max_epochs=args.epochs, patience=args.patience, lr=args.lr,
                       batch_size=args.batch_size, lookahead=args.lookahead, flow_alpha=args.alpha,
                       flow_iters=args.iters, threshold=args.threshold, seed=args.seed)
    out = _out_dir(args.out)
    _record_run(out, args, model_config=mcfg.to_dict(), train_config=asdict(tcfg))
    samples = prepare(load_manifest(args.manifest), tcfg)
    result = train(samples, mcfg, tcfg)
    save_checkpoint(result.checkpoint, out / "checkpoint.stfa")
    summary = {
        "checkpoint": "checkpoint.stfa",
        "best_epoch": result.checkpoint.epoch,
        "best_val_loss": result.checkpoint.best_val_loss,
        "stopped_early": result.stopped_early,
        "epochs": result.log_dicts(),
    }
    path = _write_json(out / "train_log.json", summary)
    from .plotting import loss_figure
    loss_figure(summary["epochs"], out / "loss.png", result.checkpoint.epoch)
    return path


def cmd_eval(args) -> Path:
    ckpt = load_checkpoint(args.checkpoint)
    tcfg = _flow_settings(args)
    out = _out_dir(args.out)
    _record_run(out, args, model_config=ckpt.config.to_dict(), flow=asdict(tcfg))
    clips = load_manifest(args.manifest)
    if args.split != "all":
        clips = [c for c in clips if c.split == args.split]
    if not clips:
        raise DataError(f"manifest has no clips in split {args.split!r}")
    samples = prepare(clips, tcfg)
    scores = [predict_clip(s, ckpt.params, ckpt.config) for s in samples]
    labels = [s.label for s in samples]
    report = evaluate(scores, labels, args.threshold)
    body = report.to_dict()
    body.update(split=args.split, clips=len(samples),
                scores=[{"id": s.id, "label": s.label, "score": x} for s, x in zip(samples, scores)])
    path = _write_json(out / "report.json", body)
    with open(out / "roc.csv", "w") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in report.roc:
            fh.write(f"{fpr!r},{tpr!r}\n")
    if report.roc:
        from .plotting import roc_figure
        roc_figure(report.roc, report.auc, out / "roc.png")
    return path


def cmd_flow(args) -> Path:
    out = _out_dir(args.out)
    _record_run(out, args)
    prev, nxt = read_netpbm(args.prev), read_netpbm(args.next)
    if prev.shape != nxt.shape:
        raise DataError(f"frames differ in extent: {prev.shape} vs {nxt.shape}")
    flow = horn_schunck(FramePair.from_frames(prev, nxt), args.alpha, args.iters)
    scale = float(max(np.abs(flow.u).max(), np.abs(flow.v).max()))
    scale = scale if scale > 0 else 1.0
    # pixel value p encodes (2p - 1) * scale
    write_netpbm(out / "flow_u.pgm", 0.5 + flow.u / (2 * scale), maxval=65535)
    write_netpbm(out / "flow_v.pgm", 0.5 + flow.v / (2 * scale), maxval=65535)
    summary = {
        "mean_magnitude": float(flow.magnitude.mean()),
        "incoherence_score": incoherence_score(flow),
        "scale": scale,
        "planes": ["flow_u.pgm", "flow_v.pgm"],
    }
    return _write_json(out / "flow.json", summary)


def cmd_slice(args) -> Path:
    out = _out_dir(args.out)
    _record_run(out, args)
    clip = read_clip(args.clip)
    try:
        sl = extract_slice(clip.frames, args.axis, args.index)
    except IndexError as exc:
        raise UsageError(str(exc)) from None
    write_netpbm(out / "slice.pgm", sl)
    summary = {"axis": args.axis, "index": args.index, "frames": sl.shape[0],
               "roughness": slice_roughness(sl), "image": "slice.pgm"}
    return _write_json(out / "slice.json", summary)


def cmd_attn_viz(args) -> Path:
    ckpt = load_checkpoint(args.checkpoint)
    tcfg = _flow_settings(args)
    out = _out_dir(args.out)
    _record_run(out, args, model_config=ckpt.config.to_dict(), flow=asdict(tcfg))
    samples = prepare_clip(read_clip(args.clip), tcfg.lookahead, tcfg.flow_alpha, tcfg.flow_iters)
    if not 0 <= args.frame < len(samples):
        raise UsageError(f"--frame must lie in [0, {len(samples)}) for this clip")
    tr = forward(samples.frames[args.frame], samples.residuals[args.frame], ckpt.params,
                 ckpt.config, trace=True)
    names = []
    for m, weights in enumerate(tr.spatial_maps.data):
        names.append(f"spatial_{m}.pgm")
        write_netpbm(out / names[-1], _minmax(weights))
    summary = {"frame": args.frame, "score": tr.score.item(), "spatial_maps": names}
    if args.temporal:
        tmap = tr.temporal_map.data
        factor = max(1, ckpt.config.input_size // tmap.shape[0])
        write_netpbm(out / "temporal.pgm", _minmax(np.kron(tmap, np.ones((factor, factor)))))
        summary.update(temporal_map=tmap.tolist(), temporal_image="temporal.pgm")
    return _write_json(out / "attention.json", summary)


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stfa", description="Spatio-temporal forgery detection toolkit.")
    p.add_argument("--version", action="version", version=f"stfa {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, flow=False):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default: $STFA_SEED or 0)")
        if flow:
            sp.add_argument("--lookahead", type=int, default=2, help="residual pairs averaged per frame")
            sp.add_argument("--alpha", type=float, default=1.0, help="flow smoothness weight")
            sp.add_argument("--iters", type=int, default=200, help="flow solver iterations")

    sp = sub.add_parser("gen-corpus", help="generate a synthetic real/fake corpus")
    common(sp)
    sp.add_argument("--clips", type=int, default=200, help="total clips, real plus fake")
    sp.add_argument("--frames", type=int, default=8)
    sp.add_argument("--size", type=_size, default=(32, 32), help="HxW")
    sp.add_argument("--flicker", type=float, default=0.04)
    sp.add_argument("--jitter", type=float, default=1.0)
    sp.add_argument("--patch", type=int, default=8)
    sp.add_argument("--motion", type=float, default=0.5)
    sp.add_argument("--ratio", type=float, default=0.8, help="train fraction")
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("train", help="train a detector on a manifest")
    common(sp, flow=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--epochs", type=int, default=80)
    sp.add_argument("--patience", type=int, default=10)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--no-temporal", action="store_true", help="ablate the temporal attention path")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a manifest with a checkpoint")
    common(sp, flow=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "val", "all"), default="val")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("flow", help="Horn-Schunck flow between two frames")
    common(sp)
    sp.add_argument("prev")
    sp.add_argument("next")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--iters", type=int, default=200)
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("slice", help="spatio-temporal slice of a clip directory")
    common(sp)
    sp.add_argument("--clip", required=True)
    sp.add_argument("--axis", choices=("row", "column"), default="row")
    sp.add_argument("--index", type=int, required=True)
    sp.set_defaults(func=cmd_slice)

    sp = sub.add_parser("attn-viz", help="dump attention maps for one frame")
    common(sp, flow=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--clip", required=True)
    sp.add_argument("--frame", type=int, default=0)
    sp.add_argument("--temporal", action="store_true", help="also dump the 3x3 temporal map")
    sp.set_defaults(func=cmd_attn_viz)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        args.seed = _resolve_seed(args.seed)
        path = args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"stfa: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        print(f"stfa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:  # configuration validation
        print(f"stfa: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
