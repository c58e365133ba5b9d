"""Command-line entry point: ``polyprobe <subcommand> [flags]``.

Exit status: 0 on success, 1 on a usage error (bad flag, infeasible spec,
missing input), 2 on a runtime failure (diverged training, under-trained
classifier, missing classifier during a sweep).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, PolyprobeError
from .experiment import SweepConfig, parse_key_values, run_sweep
from .gan import GanLossKind, TrainConfig, sample_scaled, train
from .metrics import DEFAULT_SPLITS, MIN_ACCURACY, MIN_PER_CLASS, ShapeClassifier, score_collection, train_classifier
from .report import build_report
from .shapegen import PolygonSpec, generate_dataset, image_name, load_dataset, load_image_dir, save_dataset, write_png

log = logging.getLogger("polyprobe")
SEED_ENV = "POLYPROBE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {value}")
    return value


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return _seed(raw)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{SEED_ENV}: {exc}") from None


def _loss(text: str) -> GanLossKind:
    try:
        return GanLossKind.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _existing_dir(flag: str, path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{flag}: directory {path} does not exist")
    return p


def _existing_file(flag: str, path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: file {path} does not exist")
    return p


# -- subcommands --------------------------------------------------------------------


def cmd_gen(args) -> int:
    try:
        spec = PolygonSpec(
            args.vertices, args.min_angle, args.shift, args.semi_axis_a, args.semi_axis_b,
            args.image_size, args.count, args.seed,
        )
    except PolyprobeError as exc:
        raise UsageError(f"--vertices/--min-angle/--count/--image-size: {exc}") from None
    dataset = generate_dataset(spec, workers=args.workers)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} images to {args.out}")
    return 0


def cmd_train_classifier(args) -> int:
    datasets = [load_dataset(_existing_dir("--data", d)) for d in args.data]
    clf = train_classifier(
        datasets, seed=args.seed, min_accuracy=args.min_accuracy, min_per_class=args.min_per_class,
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    clf.save(args.out)
    print(f"validation accuracy {clf.val_accuracy:.4f}; classifier written to {args.out}")
    return 0


def cmd_train_gan(args) -> int:
    dataset = load_dataset(_existing_dir("--data", args.data))
    try:
        config = TrainConfig(
            latent_dim=args.latent_dim, batch_size=args.batch_size, steps=args.steps,
            learning_rate=args.lr, beta1=args.beta1, beta2=args.beta2, loss_kind=args.loss,
            clip_c=args.clip, disc_steps_per_gen_step=args.disc_steps, seed=args.seed,
            base_channels=args.base_channels, checkpoint_every=args.checkpoint_every,
        )
    except ConfigError as exc:
        raise UsageError(f"train-gan: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, curve = train(dataset, config, out_dir=out)
    if args.samples:
        sample_dir = out / "samples"
        sample_dir.mkdir(exist_ok=True)
        imgs = sample_scaled(model, args.samples, np.random.default_rng(np.random.SeedSequence(args.seed).spawn(5)[4]))
        for k, img in enumerate(imgs):
            write_png(sample_dir / image_name(k), (img + 1.0) / 2.0)
    print(f"trained {curve.gen_updates} generator steps; outputs in {out}")
    return 0


def cmd_eval_is(args) -> int:
    clf = ShapeClassifier.load(_existing_file("--classifier", args.classifier))
    images_dir = _existing_dir("--images", args.images)
    if (images_dir / "manifest.json").exists():
        images = load_dataset(images_dir).scaled()
    else:
        images = load_image_dir(images_dir) * 2.0 - 1.0
        if len(images) == 0:
            raise UsageError(f"--images: no PNG files in {args.images}")
    try:
        result = score_collection(clf, images, args.splits)
    except ConfigError as exc:
        raise UsageError(f"--splits: {exc}") from None
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_sweep(args) -> int:
    path = _existing_file("--config", args.config) if args.config else None
    try:
        fields = SweepConfig.from_file(path).to_dict() if path else {}
        if args.workers is not None:
            fields["workers"] = args.workers
        if args.out is not None:
            fields["out_dir"] = args.out
        if args.seed is not None:
            fields["base_seed"] = args.seed
        elif not path or "base_seed" not in parse_key_values(path.read_text()):
            fields["base_seed"] = _default_seed()
        config = SweepConfig(**fields)
    except ConfigError as exc:
        raise UsageError(f"--config {args.config}: {exc}" if path else str(exc)) from None
    report = run_sweep(config, resume=args.resume)
    diverged = [r.key for r in report.records if r.status == "diverged"]
    print(f"{len(report.records)} cells in {config.out_dir}" + (f"; diverged: {', '.join(diverged)}" if diverged else ""))
    return 0


def cmd_report(args) -> int:
    summary = build_report(_existing_dir("--runs", args.runs), args.out)
    for line in summary.lines():
        print(line)
    print(f"wrote {len(summary.tables)} tables and {len(summary.plots)} plots to {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polyprobe", description="Synthetic polygon datasets, DCGAN training and Inception Scores.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", metavar="FILE", help="'key = value' file supplying defaults for this command's flags")
        return p

    seed_help = f"random seed (default: ${SEED_ENV} or 0)"

    p = add("gen", cmd_gen, "generate a polygon dataset and write it as PNGs plus a manifest")
    p.add_argument("--vertices", type=int, required=True, help="number of polygon vertices (>= 3)")
    p.add_argument("--min-angle", type=float, required=True, help="minimum central angle between vertices, degrees")
    p.add_argument("--shift", type=_bool, default=False, help="subtract the per-pixel mean (true/false, default false)")
    p.add_argument("--count", type=int, default=2000, help="number of images (default 2000)")
    p.add_argument("--image-size", type=int, default=32, help="image side length in pixels (default 32)")
    p.add_argument("--semi-axis-a", type=float, default=None, help="ellipse semi-axis along x (default 0.45 x size)")
    p.add_argument("--semi-axis-b", type=float, default=None, help="ellipse semi-axis along y (default 0.35 x size)")
    p.add_argument("--seed", type=_seed, default=None, help=seed_help)
    p.add_argument("--workers", type=int, default=1, help="threads used for rasterizing (default 1)")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train-classifier", cmd_train_classifier, "train the 3-way shape classifier used for scoring")
    p.add_argument("--data", nargs="+", required=True, metavar="DIR", help="dataset directories, one per class")
    p.add_argument("--out", required=True, metavar="FILE", help="checkpoint file to write")
    p.add_argument("--seed", type=_seed, default=None, help=seed_help)
    p.add_argument("--epochs", type=int, default=5, help="training epochs (default 5)")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size (default 64)")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    p.add_argument("--min-accuracy", type=float, default=MIN_ACCURACY, help=f"required validation accuracy (default {MIN_ACCURACY})")
    p.add_argument("--min-per-class", type=int, default=MIN_PER_CLASS, help=f"required images per class (default {MIN_PER_CLASS})")

    p = add("train-gan", cmd_train_gan, "train a DCGAN on one dataset")
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory written by 'gen'")
    p.add_argument("--loss", type=_loss, default=GanLossKind.NON_SATURATING, help="minimax, ns, wgan or lsgan (default ns)")
    p.add_argument("--steps", type=int, default=4000, help="generator updates (default 4000)")
    p.add_argument("--seed", type=_seed, default=None, help=seed_help)
    p.add_argument("--out", required=True, metavar="DIR", help="output directory for checkpoints and losses.csv")
    p.add_argument("--batch-size", type=int, default=64, help="minibatch size (default 64)")
    p.add_argument("--latent-dim", type=int, default=64, help="latent vector length (default 64)")
    p.add_argument("--lr", type=float, default=2e-4, help="Adam learning rate (default 2e-4)")
    p.add_argument("--beta1", type=float, default=0.5, help="Adam beta1 (default 0.5)")
    p.add_argument("--beta2", type=float, default=0.999, help="Adam beta2 (default 0.999)")
    p.add_argument("--clip", type=float, default=0.01, help="critic weight clip for wgan (default 0.01)")
    p.add_argument("--disc-steps", type=int, default=None, help="critic updates per generator update (default 5 for wgan, else 1)")
    p.add_argument("--base-channels", type=int, default=16, help="width of the first conv layer (default 16)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="save a checkpoint every K steps (0 = final only)")
    p.add_argument("--samples", type=int, default=0, help="also write this many generated PNGs to OUT/samples")

    p = add("eval-is", cmd_eval_is, "Inception Score of a directory of images")
    p.add_argument("--classifier", required=True, metavar="FILE", help="classifier checkpoint")
    p.add_argument("--images", required=True, metavar="DIR", help="dataset directory or directory of PNGs")
    p.add_argument("--splits", type=int, default=DEFAULT_SPLITS, help=f"number of splits (default {DEFAULT_SPLITS})")

    p = add("sweep", cmd_sweep, "run the full grid of dataset/GAN/scoring cells")
    p.add_argument("--workers", type=int, default=None, help="cells run concurrently (default from config, else 1)")
    p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True, help="skip cells already finished (default on)")
    p.add_argument("--out", default=None, metavar="DIR", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=_seed, default=None, help=f"base seed (overrides base_seed; default ${SEED_ENV} or 0)")

    p = add("report", cmd_report, "tables, plots, trend checks and loss roughness for a sweep directory")
    p.add_argument("--runs", required=True, metavar="DIR", help="sweep output directory")
    p.add_argument("--out", required=True, metavar="DIR", help="where to write tables and plots")
    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` for non-sweep commands and install its values as flag defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or known.command in (None, "sweep"):
        return
    path = _existing_file("--config", known.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices.get(known.command)
    if sub is None:
        return
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    defaults = {}
    for key, value in parse_key_values(path.read_text(), str(path)).items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"--config {known.config}: unknown key {key!r} for '{known.command}'")
        action = actions[dest]
        try:
            if action.nargs in ("+", "*"):
                defaults[dest] = [p.strip() for p in value.split(",") if p.strip()]
            else:
                defaults[dest] = action.type(value) if action.type else value
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"--config {known.config}: bad value for {key!r}: {exc}") from None
        action.required = False
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if args.command is None:
            parser.print_help()
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "seed", None) is None and args.command != "sweep":
            args.seed = _default_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
