"""Command-line front end: train, eval, sweep, make-frame, gen-data."""

import argparse
import json
import logging
import sys
import tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config import DEFAULT_FRAME_ALPHA, LOG_LEVEL, SWEEP_AXES
from .errors import BinpropError, ConfigError
from .runner import evaluate, generate_data, make_frame, run_sweep, train_run
from .types import (
    DATA_KINDS,
    ENCODER_KINDS,
    MODEL_KINDS,
    DataSpec,
    FrameSearchConfig,
    PrototypeTaskConfig,
    RunConfig,
    SequenceTaskConfig,
)


logger = logging.getLogger(__name__)


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _group_sizes(text: str):
    sizes = _ints(text)
    return sizes[0] if len(sizes) == 1 else sizes


def _image_size(text: str) -> List[int]:
    try:
        width, height = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    return [width, height]


# flag, config path, type, help
RUN_FLAGS = [
    ("--model", ("model",), str, f"model kind {MODEL_KINDS}"),
    ("--layers", ("layers",), _ints, "hidden widths K_1,..,K_L (mlp) or K_s,K_y (rnn)"),
    ("--seed", ("seed",), int, "base seed for every random stream"),
    ("--output-dir", ("output_dir",), str, "directory for metrics and checkpoints"),
    ("--workers", ("workers",), int, "worker processes for sweeps"),
    ("--r", ("hyper", "r"), float, "robustness margin r"),
    ("--nu", ("hyper", "nu"), float, "gating threshold nu"),
    ("--p-r", ("hyper", "p_r"), float, "reinforcement probability p_r"),
    ("--gamma0", ("hyper", "gamma0"), _group_sizes, "initial group size, or one per layer"),
    ("--epochs", ("hyper", "epochs"), int, "training epochs"),
    ("--batch-size", ("hyper", "batch_size"), int, "mini-batch size (default N // 10)"),
    ("--weight-bits", ("hyper", "weight_bits"), int, "hidden weight width B"),
    ("--patience", ("hyper", "stagnation_patience"), int, "epochs without improvement before groups grow"),
    ("--horizon", ("hyper", "horizon"), int, "backward horizon in steps (rnn)"),
    ("--sy-step", ("hyper", "sy_step"), int, "state-to-output update step, 1 or 2 (rnn)"),
    ("--encoder", ("encoder", "kind"), str, f"input encoder {ENCODER_KINDS}"),
    ("--bits", ("encoder", "bits"), int, "thermometer bits per feature"),
    ("--expansion", ("encoder", "expansion"), int, "width of the fixed random expansion"),
    ("--data", ("data", "kind"), str, f"data source {DATA_KINDS}"),
    ("--train-path", ("data", "train_path"), str, "training data file or folder"),
    ("--test-path", ("data", "test_path"), str, "test data file or folder"),
    ("--train-labels", ("data", "train_labels"), str, "IDX training labels"),
    ("--test-labels", ("data", "test_labels"), str, "IDX test labels"),
    ("--window", ("data", "window"), int, "trailing window length for series"),
    ("--separator", ("data", "separator"), str, "field separator for delimited series"),
    ("--channels", ("data", "channels"), int, "values per time step for delimited series"),
    ("--image-size", ("data", "image_size"), _image_size, "resize folder images to WIDTHxHEIGHT"),
    ("--validation-fraction", ("data", "validation_fraction"), float, "share of training data held out"),
    ("--frame", ("frame", "path"), str, "stored frame file (searched when omitted)"),
    ("--frame-alpha", ("frame", "alpha"), float, "frame search variance weight"),
    ("--frame-iterations", ("frame", "iterations"), int, "frame search iterations"),
    ("--frame-seed", ("frame", "seed"), int, "frame search seed"),
]

# Data source flags; eval takes these alone to score a checkpoint on other data
DATA_FLAGS = [entry for entry in RUN_FLAGS if entry[1][0] == "data"]

# Synthetic task flags; they land in the section of the selected task
TASK_FLAGS = [
    ("--n-train", "n_train", int, "synthetic training samples"),
    ("--n-test", "n_test", int, "synthetic test samples"),
    ("--classes", "classes", int, "synthetic task classes"),
    ("--flip-p", "flip_p", float, "per-bit flip probability"),
    ("--input-dim", "dim", int, "prototype task input width"),
    ("--steps", "steps", int, "sequence task length"),
    ("--width", "width", int, "sequence task frame width"),
]


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="TOML file with run settings; flags override it")
    for flag, _, kind, text in RUN_FLAGS:
        parser.add_argument(flag, dest=_dest(flag), type=kind, default=None, help=text)
    _add_task_flags(parser)


def _add_task_flags(parser: argparse.ArgumentParser):
    for flag, _, kind, text in TASK_FLAGS:
        parser.add_argument(flag, dest=_dest(flag), type=kind, default=None, help=text)


def _add_data_flags(parser: argparse.ArgumentParser):
    for flag, _, kind, text in DATA_FLAGS:
        parser.add_argument(flag, dest=_dest(flag), type=kind, default=None, help=text)
    _add_task_flags(parser)


def _set(mapping: Dict[str, Any], path, value):
    for key in path[:-1]:
        mapping = mapping.setdefault(key, {})
    mapping[path[-1]] = value


def load_toml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """Config file values, overridden by every flag given on the command line."""
    mapping = load_toml(args.config) if args.config else {}
    for flag, path, _, _ in RUN_FLAGS:
        value = getattr(args, _dest(flag))
        if value is not None:
            _set(mapping, path, value)

    task = "sequences" if mapping.get("data", {}).get("kind") == "sequences" else "prototypes"
    for flag, key, _, _ in TASK_FLAGS:
        value = getattr(args, _dest(flag))
        if value is not None:
            _set(mapping, ("data", task, key), value)
    return RunConfig.from_mapping(mapping)


def data_spec_from_args(args: argparse.Namespace) -> Optional[DataSpec]:
    """A data source from the data flags, or None when none was given.

    Without ``--validation-fraction`` the whole training file stays in the
    train split.
    """
    mapping: Dict[str, Any] = {}
    for flag, path, _, _ in DATA_FLAGS:
        value = getattr(args, _dest(flag))
        if value is not None:
            _set(mapping, path[1:], value)
    task = "sequences" if mapping.get("kind") == "sequences" else "prototypes"
    for flag, key, _, _ in TASK_FLAGS:
        value = getattr(args, _dest(flag))
        if value is not None:
            _set(mapping, (task, key), value)
    if not mapping:
        return None
    mapping.setdefault("validation_fraction", 0.0)
    return DataSpec.from_mapping(mapping)


def _task_config(kind: str, args: argparse.Namespace):
    values = {key: getattr(args, _dest(flag)) for flag, key, _, _ in TASK_FLAGS}
    values = {k: v for k, v in values.items() if v is not None}
    values["seed"] = args.seed
    try:
        if kind == "sequences":
            values.pop("dim", None)
            return SequenceTaskConfig(**values)
        values.pop("steps", None)
        values.pop("width", None)
        return PrototypeTaskConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def parse_axis(text: str):
    name, _, values = text.partition("=")
    name = name.strip()
    if name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {name!r}; choose from {SWEEP_AXES}")
    points = [v.strip() for v in values.split(",") if v.strip()]
    if not points:
        raise ConfigError(f"sweep axis {name!r} has no values")
    return name, points


def cmd_train(args: argparse.Namespace) -> int:
    result = train_run(run_config_from_args(args))
    print(f"Best selection accuracy {result.best_accuracy:.4f} at epoch {result.best_epoch}")
    if result.test_accuracy is not None:
        print(f"Test accuracy at that epoch: {result.test_accuracy:.4f}")
    print(f"Checkpoint: {result.checkpoint}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    result = evaluate(args.checkpoint, args.split, data_spec_from_args(args))
    if args.json:
        print(json.dumps({"count": result.count, "accuracy": result.accuracy,
                          "mean_margin": result.mean_margin, "confusion": result.confusion}))
        return 0

    print(f"Samples: {result.count}")
    print(f"Accuracy: {result.accuracy:.4f}")
    print(f"Mean margin: {result.mean_margin:.4f}")
    print("Confusion (rows = true class, columns = predicted):")
    for c, row in enumerate(result.confusion):
        print(f"  {c:>3}: " + " ".join(f"{v:>6}" for v in row))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    if not args.axis:
        raise ConfigError("a sweep needs at least one --axis NAME=V1,V2,...")
    axes = dict(parse_axis(text) for text in args.axis)
    template = run_config_from_args(args)
    seeds = [template.seed + i for i in range(args.seeds)]
    rows = run_sweep(template, axes, seeds)

    names = list(axes)
    print("\t".join(names + ["mean", "std"]))
    for row in rows:
        print("\t".join([str(row.axes[n]) for n in names] + [f"{row.mean:.4f}", f"{row.std:.4f}"]))
    return 0


def cmd_make_frame(args: argparse.Namespace) -> int:
    config = FrameSearchConfig(args.classes, args.dim, args.alpha, args.iterations, args.seed)
    frame, path = make_frame(config, args.out)
    print(f"Wrote {frame.classes}x{frame.dim} frame to {path}")
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    for path in generate_data(args.kind, args.out, _task_config(args.kind, args)):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="binprop", description="Binary error propagation training")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a model")
    _add_run_flags(train)
    train.set_defaults(handler=cmd_train)

    evaluation = commands.add_parser("eval", help="evaluate a checkpoint")
    evaluation.add_argument("checkpoint", type=Path)
    evaluation.add_argument("--split", choices=["train", "validation", "test"], default="test")
    evaluation.add_argument("--json", action="store_true", help="print the report as JSON")
    _add_data_flags(evaluation)
    evaluation.set_defaults(handler=cmd_eval)

    sweep = commands.add_parser("sweep", help="train across a grid of settings")
    _add_run_flags(sweep)
    sweep.add_argument("--axis", action="append", help=f"NAME=V1,V2,... with NAME in {SWEEP_AXES}")
    sweep.add_argument("--seeds", type=int, default=1, help="replicates per point (consecutive seeds)")
    sweep.set_defaults(handler=cmd_sweep)

    frame = commands.add_parser("make-frame", help="search and store a prototype frame")
    frame.add_argument("--classes", type=int, required=True)
    frame.add_argument("--dim", type=int, required=True)
    frame.add_argument("--alpha", type=float, default=DEFAULT_FRAME_ALPHA)
    frame.add_argument("--iterations", type=int, default=None)
    frame.add_argument("--seed", type=int, default=0)
    frame.add_argument("--out", type=Path, required=True)
    frame.set_defaults(handler=cmd_make_frame)

    gen = commands.add_parser("gen-data", help="write a synthetic task to disk")
    gen.add_argument("kind", choices=["prototypes", "sequences"])
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--seed", type=int, default=0)
    _add_task_flags(gen)
    gen.set_defaults(handler=cmd_gen_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else LOG_LEVEL)

    try:
        return args.handler(args)
    except BinpropError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return 3
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
