"""Command-line entry point: ``lip2tongue <subcommand> [options]``.

Subcommands: synth, flow, train, eval, predict, metrics, ablate. Every
subcommand accepts ``--config`` (a preset name or TOML path), repeated
``--set key=value`` overrides, ``--out`` and ``--threads``. The thread count
can also come from the ``LIP2TONGUE_THREADS`` environment variable.

Exit status is 0 on success, 2 for configuration or usage errors and 1 for
failures at run time. Errors print one line, ``ErrorClass: message``, on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .config import load_config, save_config
from .errors import ConfigError, Lip2TongueError, UsageError
from .flow import FlowField, flow_to_color, sequence_flows, write_flow
from .model import forward_sequence
from .metrics import evaluate_pairs, write_frame_csv
from .preproc import RoiSpec, list_frames, preprocess_frame, read_frame, resize_bilinear, write_frame
from .synth import gen_dataset
from .tensor import no_grad
from .training import (
    ablate, evaluate, format_ablation, format_metrics, load_params, resolve_run_config, thread_limit, train, write_kv,
)

log = logging.getLogger("lip2tongue")


class CommandLineError(UsageError):
    """Bad arguments on the command line (exit status 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CommandLineError(message)


def _parse_roi(text):
    try:
        x, y, w, h = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--roi must be x,y,w,h integers, got {text!r}") from None
    return RoiSpec(x, y, w, h)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="preset name (default, desk) or TOML file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set model.embed_dim=64")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="BLAS threads (0 = library default)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="lip2tongue", description="Lip video to ultrasound tongue image reconstruction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="generate a synthetic paired dataset")

    s = sub.add_parser("flow", parents=[common], help="Horn-Schunck flow for a directory of lip frames")
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--roi", type=_parse_roi, default=None, help="x,y,w,h crop before resizing")

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", type=Path, default=None, help="dataset directory or manifest")

    for name, helptext in (("eval", "evaluate a checkpoint"), ("predict", "predict ultrasound frames")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--ckpt", type=Path, required=True)
        s.add_argument("--data", type=Path, default=None)
        if name == "eval":
            s.add_argument("--split", choices=("val", "test"), default="test")
            s.add_argument("--dump", action="store_true", help="also save predicted and target frames")
        else:
            s.add_argument("--in", dest="input", type=Path, required=True, help="directory of lip frames")
            s.add_argument("--roi", type=_parse_roi, default=None)

    s = sub.add_parser("metrics", parents=[common], help="compare two directories of frames")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--target", type=Path, required=True)

    s = sub.add_parser("ablate", parents=[common], help="train the four ablation variants")
    s.add_argument("--data", type=Path, default=None)
    return p


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LIP2TONGUE_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"LIP2TONGUE_THREADS must be an integer, got {env!r}") from None
    return 0


def _config(args, ckpt=None):
    overrides = list(args.overrides)
    data = getattr(args, "data", None)
    if data is not None:
        overrides.append(("dataset", str(data.resolve())))
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    threads = _threads(args)
    if threads:
        overrides.append(("threads", threads))
    if ckpt is not None and args.config is None:
        return resolve_run_config(ckpt, None, overrides)
    return load_config(args.config, overrides)


def _need_out(args) -> Path:
    if args.out is None:
        raise CommandLineError(f"{args.command} needs --out")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def cmd_synth(args):
    cfg = _config(args)
    out = _need_out(args)
    manifest = gen_dataset(cfg.synth, out)
    print(f"wrote {cfg.synth.n_sequences} sequences; manifest {manifest}")


def _lip_stack(directory: Path, roi, H, W):
    files = list_frames(directory)
    if not files:
        raise ConfigError(f"no frames in {directory}")
    return np.stack([preprocess_frame(read_frame(f), roi, W, H) for f in files]).astype(np.float32)


def cmd_flow(args):
    cfg = _config(args)
    out = _need_out(args)
    frames = _lip_stack(args.input, args.roi, cfg.model.H, cfg.model.W)
    with thread_limit(cfg.threads):
        flows = sequence_flows(frames, cfg.flow.alpha, cfg.flow.iterations, cfg.flow.intensity_scale)
    mags = []
    for i, f in enumerate(flows):
        field = FlowField(f[0], f[1])
        write_flow(out / f"flow_{i:06d}.flo", field)
        Image.fromarray(flow_to_color(field)).save(out / f"flow_{i:06d}.png")
        mags.append(float(np.mean(np.hypot(f[0], f[1]))))
    write_kv(out / "report.kv", {"pairs": len(flows), "mean_magnitude": float(np.mean(mags)) if mags else 0.0})
    (out / "report.txt").write_text(f"{len(flows)} flow fields from {args.input}\n")
    print(f"wrote {len(flows)} flow fields to {out}")


def cmd_train(args):
    cfg = _config(args)
    out = _need_out(args)
    _, rep = train(cfg, out)
    print((out / "report.txt").read_text(), end="")


def cmd_eval(args):
    cfg = _config(args, args.ckpt)
    out = _need_out(args)
    rep = evaluate(args.ckpt, args.split, cfg, dump_dir=out / "frames" if args.dump else None)
    (out / "report.txt").write_text(f"{args.split} split\n{format_metrics(rep)}\n")
    write_kv(out / "report.kv", rep.as_kv(f"{args.split}."))
    write_frame_csv(out / "frames.csv", rep.per_frame)
    print((out / "report.txt").read_text(), end="")


def cmd_predict(args):
    """One output PNG per clip position that has a full N-frame clip."""
    cfg = _config(args, args.ckpt)
    out = _need_out(args)
    m = cfg.model_config()
    params = load_params(args.ckpt, cfg)
    frames = _lip_stack(args.input, args.roi, m.H, m.W)
    n = len(frames)
    half = m.N // 2
    centers = list(range(half, n - m.N + half + 1))
    if not centers:
        raise ConfigError(f"need at least {m.N} frames, found {n}")
    with thread_limit(cfg.threads), no_grad():
        flows = sequence_flows(frames, cfg.flow.alpha, cfg.flow.iterations, cfg.flow.intensity_scale) if cfg.needs_flow else None
        for start in range(0, len(centers), m.T):
            chunk = centers[start : start + m.T]
            gray = np.stack([frames[c - half : c - half + m.N] for c in chunk])[None]
            flow = None
            if flows is not None:
                flow = np.stack([flows[c - half : c - half + m.N - 1] for c in chunk])[None]
            images = forward_sequence(gray, flow, params, m, "infer").images.data[0]
            for c, img in zip(chunk, images):
                write_frame(out / f"frame_{c:06d}.png", img)
    print(f"wrote {len(centers)} predicted frames to {out}")


def cmd_metrics(args):
    out = _need_out(args)
    pf, tf = list_frames(args.pred), list_frames(args.target)
    by_name = {f.name: f for f in tf}
    pairs = [(p, by_name[p.name]) for p in pf if p.name in by_name]
    if not pairs:
        raise ConfigError(f"no matching frame names between {args.pred} and {args.target}")
    preds, targets = [], []
    for p, t in pairs:
        a, b = read_frame(p), read_frame(t)
        if a.shape != b.shape:
            a = resize_bilinear(a, b.shape[1], b.shape[0])
        preds.append(a)
        targets.append(b)
    rep = evaluate_pairs(preds, targets)
    (out / "report.txt").write_text(format_metrics(rep) + "\n")
    write_kv(out / "report.kv", rep.as_kv())
    write_frame_csv(out / "frames.csv", rep.per_frame, [p.name for p, _ in pairs])
    print((out / "report.txt").read_text(), end="")


def cmd_ablate(args):
    cfg = _config(args)
    out = _need_out(args)
    save_config(cfg, out / "config.toml")
    rows = ablate(cfg, out)
    print(format_ablation(rows), end="")


COMMANDS = {
    "synth": cmd_synth, "flow": cmd_flow, "train": cmd_train, "eval": cmd_eval,
    "predict": cmd_predict, "metrics": cmd_metrics, "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        COMMANDS[args.command](args)
        return 0
    except (ConfigError, CommandLineError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except (Lip2TongueError, ValueError, IndexError, OSError, FloatingPointError, RuntimeError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
