"""Command-line entry point: ``edgesynth <command> [options]``.

Exit codes: 0 success, 1 validation or IO error, 2 numerical failure.
"""

import argparse
import os
import sys

from .exceptions import EdgeSynthError, NumericalError
from .pipeline import commands
from .pipeline.config import PipelineConfig
from .pipeline.manifest import DatasetManifest

COMMANDS = ("toygen", "prepare", "fuse", "train-gan", "synth", "train-seg", "eval", "report")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="edgesynth",
        description="Edge-fused synthetic augmentation pipeline for nuclei segmentation.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat 'key = value' settings file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting (repeatable)")
    parser.add_argument("--seed", type=int, help="top-level seed; overrides the config")
    parser.add_argument("--manifest", help="manifest path (default: OUT/manifest.jsonl)")
    parser.add_argument("--out", help="output directory for toygen and prepare")
    parser.add_argument("--raw", help="raw data directory for prepare")
    parser.add_argument("--mode", choices=("g0", "g1"), help="synthesis mode")
    parser.add_argument("--run", help="run name for train-seg and eval, e.g. initial")
    parser.add_argument("--origins", help="comma-separated training origins for train-seg (real,g0,g1)")
    return parser


def load_config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for item in args.set:
        if "=" not in item:
            raise EdgeSynthError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.set("seed", args.seed)
    return cfg


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise EdgeSynthError(f"{args.command} needs {', '.join(missing)}")


def _manifest(args):
    if args.manifest is None and args.out is None:
        raise EdgeSynthError(f"{args.command} needs --manifest (or --out holding {commands.MANIFEST_NAME})")
    path = args.manifest or os.path.join(args.out, commands.MANIFEST_NAME)
    return DatasetManifest.load(path)


def run(args):
    cfg = load_config(args)
    cmd = args.command
    if cmd == "toygen":
        _require(args, "out")
        m = commands.cmd_toygen(cfg, args.out)
        return f"wrote {len(m.records)} toy samples to {args.out}"
    if cmd == "prepare":
        _require(args, "raw", "out")
        m, counts, weights = commands.cmd_prepare(cfg, args.raw, args.out)
        shown = "undefined" if weights is None else f"backgrd={weights[0]:.3f} ROI={weights[1]:.3f}"
        return (f"wrote {len(m.records)} tiles ({len(m.select('test'))} test); "
                f"pixels backgrd={counts[0]} ROI={counts[1]}; weights {shown}")
    manifest = _manifest(args)
    if cmd == "fuse":
        commands.cmd_fuse(cfg, manifest)
        return f"fused {len(manifest.select(origins=('real',)))} samples"
    if cmd == "train-gan":
        log = commands.cmd_train_gan(cfg, manifest)
        return f"trained GAN for {len(log)} iterations; final gen_l1={log.rows[-1][2]:.4f}"
    if cmd == "synth":
        _require(args, "mode")
        recs = commands.cmd_synth(cfg, manifest, args.mode)
        return f"synthesized {len(recs)} {args.mode} pairs; train set now {len(manifest.select('train'))}"
    if cmd == "train-seg":
        _require(args, "run")
        origins = [o.strip() for o in args.origins.split(",")] if args.origins else None
        losses = commands.cmd_train_seg(cfg, manifest, args.run, origins)
        return f"run {args.run}: trained {len(losses)} epochs, final loss {losses[-1]:.4f}"
    if cmd == "eval":
        _require(args, "run")
        return commands.cmd_eval(cfg, manifest, args.run).to_text().rstrip()
    return commands.cmd_report(cfg, manifest).to_text().rstrip()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        message = run(args)
    except NumericalError as err:
        print(f"edgesynth: numerical failure: {err}", file=sys.stderr)
        return 2
    except (EdgeSynthError, OSError) as err:
        print(f"edgesynth: error: {err}", file=sys.stderr)
        return 1
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
