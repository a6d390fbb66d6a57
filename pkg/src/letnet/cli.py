"""``letnet`` command line: analyze, train, infer, eval, gradcheck, dump-config.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
(including failed gradient checks), 4 I/O or data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import gradcheck as gc
from .accounting import count_macs
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, dump_config, load_config, preset_config
from .data import (
    Palette, Sample, SyntheticSpec, colorize, load_camvid_dir, normalize, read_image, synth_dataset,
    write_image, write_labels,
)
from .errors import ConfigError, LETNetError
from .evaluation import ConfusionMatrix, iou
from .model import LETNet
from .tensor import Tensor
from .training import MetricsCSV, train

log = logging.getLogger("letnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_resolution(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"resolution must look like HxW, got {text!r}")
    h, w = int(parts[0]), int(parts[1])
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"resolution must be positive, got {text!r}")
    return h, w


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return preset_config(getattr(args, "preset", None) or "tiny")


def dataset_splits(cfg: RunConfig) -> dict[str, list[Sample]]:
    d = cfg.data
    k = cfg.model.num_classes
    if d.kind == "camvid":
        root = Path(d.root)
        if not root.is_dir():
            raise ConfigError(f"data.root {root} does not exist")
        return load_camvid_dir(root, k, cfg.train.ignore_index, (d.train_split, d.val_split), d.mean, d.std).splits
    spec = SyntheticSpec(d.synthetic_seed, d.synthetic_size, k, d.synthetic_density, d.synthetic_noise)
    # validation images come from a disjoint stream so they are never training samples
    val_spec = SyntheticSpec(d.synthetic_seed + 1_000_003, d.synthetic_size, k, d.synthetic_density,
                             d.synthetic_noise)
    splits = {d.train_split: synth_dataset(spec, d.train_count), d.val_split: synth_dataset(val_spec, d.val_count)}
    for samples in splits.values():
        for s in samples:
            s.image = normalize(s.image, d.mean, d.std)
    return splits


def evaluate(model: LETNet, samples: list[Sample], num_classes: int, ignore_index: int = 255) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes, ignore_index)
    for s in samples:
        pred = model.predict(Tensor(s.image[None]))[0]
        cm.accumulate(pred, s.labels)
    return cm


# -- commands ---------------------------------------------------------------------

def cmd_analyze(args) -> int:
    cfg = _run_config(args)
    model = LETNet(cfg.model, seed=cfg.run.seed)
    report = count_macs(model, args.resolution or cfg.model.resolution)
    if not args.quiet:
        print(report.table())
    print(report.summary())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    splits = dataset_splits(cfg)
    samples = splits.get(cfg.data.train_split, [])
    checkpoint = Path(args.checkpoint or cfg.run.checkpoint)
    metrics = Path(args.metrics or cfg.run.metrics)
    model = LETNet(cfg.model, seed=cfg.run.seed)
    if cfg.train.max_iterations > 0 and not samples:
        raise ConfigError(f"split {cfg.data.train_split!r} has no samples to train on")
    if metrics.exists():
        metrics.unlink()
    sink = MetricsCSV(metrics)
    start = time.perf_counter()
    try:
        if cfg.train.max_iterations > 0:
            state = train(model, samples, cfg.train, [sink])
            print(f"trained {state.iteration} iterations in {time.perf_counter() - start:.1f}s, "
                  f"final loss {state.losses[-1]:.6f}")
        model.eval()
    finally:
        sink.close()
    save_checkpoint(model, checkpoint)
    print(f"checkpoint written to {checkpoint}")
    val = splits.get(cfg.data.val_split)
    if val and cfg.train.max_iterations > 0:
        print(f"{cfg.data.val_split} mIoU: {iou(evaluate(model, val, cfg.model.num_classes)).mean:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    model = load_checkpoint(args.checkpoint, cfg.model)
    image = normalize(read_image(args.input), cfg.data.mean, cfg.data.std)
    cfg.model.check_input(*image.shape[1:])
    labels = model.predict(Tensor(image[None]))[0]
    output = Path(args.output)
    label_path = Path(args.labels) if args.labels else output.with_suffix(".pgm")
    write_image(colorize(labels, Palette.default(cfg.model.num_classes)), output)
    write_labels(labels, label_path)
    print(f"wrote {output} and {label_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    splits = dataset_splits(cfg)
    split = args.split or cfg.data.val_split
    if split not in splits:
        raise ConfigError(f"split {split!r} has no labelled samples (available: {', '.join(splits) or 'none'})")
    samples = splits[split]
    if not samples:
        raise ConfigError(f"split {split!r} is empty")
    model = load_checkpoint(args.checkpoint, cfg.model)
    report = iou(evaluate(model, samples, cfg.model.num_classes, cfg.train.ignore_index))
    print(report.table())
    print(f"mIoU: {report.mean:.4f}")
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = 0
    for result in gc.SCOPES[args.scope](seed=args.seed, corrupt=args.corrupt_grad):
        print(result.line())
        failed += not result.passed
    print(f"{failed} failing" if failed else "all gradient checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_dump_config(args) -> int:
    sys.stdout.write(dump_config(_run_config(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="letnet", description="LETNet segmentation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument("config", nargs="?", help="run config file (section.key = value lines)")
        p.add_argument("--preset", choices=PRESETS, help="use a built-in config instead of a file")
        return p

    p = with_config(sub.add_parser("analyze", help="per-layer parameter and MAC report"))
    p.add_argument("--resolution", type=parse_resolution, help="input HxW (default: model.resolution)")
    p.add_argument("--csv", help="write the per-layer report as CSV")
    p.add_argument("--quiet", action="store_true", help="print totals only")
    p.set_defaults(func=cmd_analyze)

    p = with_config(sub.add_parser("train", help="train and write a checkpoint plus metrics CSV"))
    p.add_argument("--checkpoint", help="output checkpoint (default: run.checkpoint)")
    p.add_argument("--metrics", help="output metrics CSV (default: run.metrics)")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("infer", help="segment one PPM image"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="P6 image")
    p.add_argument("--output", required=True, help="colourised P6 segmentation")
    p.add_argument("--labels", help="raw P5 label map (default: output with .pgm suffix)")
    p.set_defaults(func=cmd_infer)

    p = with_config(sub.add_parser("eval", help="per-class IoU on a labelled split"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", help="split name (default: data.val_split)")
    p.add_argument("--csv", help="write class,iou CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scope", choices=sorted(gc.SCOPES), default="block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-grad", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = with_config(sub.add_parser("dump-config", help="print the canonical form of a config"))
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LETNetError as exc:
        print(f"letnet {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"letnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
