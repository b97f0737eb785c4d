"""Run orchestration shared by the command line and the MCP tools."""

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bep import Network, TrainState, label_margins, predict, schedule_step, train_epoch
from .beptt import RnnModel, rnn_predict, rnn_train_epoch
from .checkpoint import capture, load_checkpoint, restore, save_checkpoint
from .data import (
    Dataset,
    EncodedDataset,
    gen_random_prototypes,
    gen_random_sequences,
    label_map_of,
    load_delimited_series,
    load_feature_file,
    load_idx_images,
    load_image_folder,
    split,
    write_delimited_series,
    write_feature_file,
)
from .encode import Encoder
from .errors import ConfigError, DataError, DimensionError
from .frames import PrototypeFrame, load_frame, save_frame, search_frame, self_test
from .types import (
    DataSpec,
    EpochMetrics,
    EvalReport,
    FrameSearchConfig,
    PrototypeTaskConfig,
    RunConfig,
    SequenceTaskConfig,
    SweepRow,
)


logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "best.bepc"
CONFIG_FILE = "config.json"
SWEEP_FILE = "sweep.tsv"

Model = Network | RnnModel


@dataclass
class PreparedData:
    """Encoded splits and the encoder fitted on the training rows."""
    encoder: Encoder
    train: EncodedDataset
    validation: Optional[EncodedDataset]
    test: Optional[EncodedDataset]

    @property
    def classes(self) -> int:
        return self.train.classes


@dataclass
class TrainReport:
    output_dir: Path
    checkpoint: Path
    best_epoch: int
    best_accuracy: float
    test_accuracy: Optional[float]
    metrics: List[EpochMetrics] = field(default_factory=list)

    @property
    def score(self) -> float:
        """Test accuracy of the best checkpoint when a test split exists."""
        return self.test_accuracy if self.test_accuracy is not None else self.best_accuracy


def load_splits(config: RunConfig) -> Dict[str, Dataset]:
    """Raw train / validation / test datasets for a resolved config."""
    spec: DataSpec = config.data
    test = None
    if spec.kind == "prototypes":
        train, test = gen_random_prototypes(spec.prototypes)
    elif spec.kind == "sequences":
        train, test = gen_random_sequences(spec.sequences)
    elif spec.kind == "idx":
        train = load_idx_images(spec.train_path, spec.train_labels)
        if spec.test_path:
            if not spec.test_labels:
                raise ConfigError("idx test data requires test_labels")
            test = load_idx_images(spec.test_path, spec.test_labels, classes=train.classes, split="test")
    elif spec.kind == "delimited":
        train = load_delimited_series(spec.train_path, spec.window, separator=spec.separator,
                                      channels=spec.channels)
        if spec.test_path:
            test = load_delimited_series(spec.test_path, train.steps, separator=spec.separator,
                                         channels=spec.channels, label_map=label_map_of(train), split="test")
    elif spec.kind == "features":
        train = load_feature_file(spec.train_path)
        if spec.test_path:
            test = load_feature_file(spec.test_path, classes=train.classes, split="test")
    else:
        train = load_image_folder(spec.train_path, spec.image_size)
        if spec.test_path:
            test = load_image_folder(spec.test_path, spec.image_size, split="test")

    if len(train) == 0:
        raise DataError("training data is empty")
    if test is not None and test.classes != train.classes:
        raise DataError(f"test data has {test.classes} classes, training data {train.classes}")

    splits = {"train": train}
    if spec.validation_fraction > 0:
        splits["train"], splits["validation"] = split(train, 1 - spec.validation_fraction, config.seeds.split)
    if test is not None and len(test):
        splits["test"] = test
    return splits


def build_datasets(config: RunConfig) -> PreparedData:
    splits = load_splits(config)
    encoder = Encoder.fit(config.encoder, splits["train"])
    encoded = {name: encoder.encode(ds) for name, ds in splits.items()}
    logger.info(", ".join(f"{name}: {len(ds)}" for name, ds in encoded.items()))
    return PreparedData(encoder, encoded["train"], encoded.get("validation"), encoded.get("test"))


def build_frame(config: RunConfig, classes: int) -> PrototypeFrame:
    dim = config.layers[-1]
    if config.frame.path:
        frame = load_frame(config.frame.path)
        if frame.classes != classes or frame.dim != dim:
            raise DimensionError(f"frame is {frame.classes}x{frame.dim}, the run needs {classes}x{dim}")
        return frame

    search = FrameSearchConfig(classes, dim, config.frame.alpha, config.frame.iterations, config.frame.seed)
    frame = search_frame(search)
    if not self_test(frame):
        logger.warning(f"Searched frame {classes}x{dim} fails its self-test")
    return frame


def build_model(config: RunConfig, data: PreparedData) -> Model:
    frame = build_frame(config, data.classes)
    rng = np.random.default_rng(config.seeds.init)
    if config.model == "rnn":
        state_width, output_width = config.layers
        return RnnModel.build(data.encoder.output_width, state_width, output_width, frame, config.hyper, rng)
    return Network.build(data.encoder.output_width, config.layers, frame, config.hyper, rng)


def start_state(config: RunConfig) -> TrainState:
    return TrainState.start(config.trained_widths, config.hyper, config.seeds.train)


def logits_of(model: Model, data: EncodedDataset) -> np.ndarray:
    if isinstance(model, RnnModel):
        return rnn_predict(model, data.frames)
    if data.steps != 1:
        raise DimensionError(f"a feedforward network cannot read {data.steps}-step sequences")
    if data.width != model.input_width:
        raise DimensionError(f"input width {data.width} != network input width {model.input_width}")
    return predict(model, data.frames[0])


def accuracy(model: Model, data: EncodedDataset) -> float:
    if len(data) == 0:
        raise DataError(f"{data.split} split is empty")
    return float(np.mean(logits_of(model, data).argmax(axis=1) == data.labels))


def report(model: Model, data: EncodedDataset) -> EvalReport:
    """Accuracy, confusion counts (true x predicted) and mean margin / K_L."""
    if len(data) == 0:
        raise DataError(f"{data.split} split is empty")
    logits = logits_of(model, data)
    predicted = logits.argmax(axis=1)
    confusion = np.zeros((data.classes, data.classes), dtype=np.int64)
    np.add.at(confusion, (data.labels, predicted), 1)
    margins = label_margins(logits, data.labels) / model.frame.dim
    return EvalReport(
        count=len(data),
        accuracy=float(np.mean(predicted == data.labels)),
        confusion=confusion.tolist(),
        mean_margin=float(margins.mean()),
    )


def _run_epoch(model: Model, data: EncodedDataset, state: TrainState) -> EpochMetrics:
    if isinstance(model, RnnModel):
        return rnn_train_epoch(model, data, state)
    return train_epoch(model, data, state)


def _write_record(stream, metrics: EpochMetrics):
    stream.write(json.dumps(metrics.to_record(), sort_keys=True) + "\n")
    stream.flush()


def train_run(config: RunConfig) -> TrainReport:
    """Train, logging one metrics record per epoch and keeping the best checkpoint.

    Epoch 0 is the untrained model. The selection accuracy is measured on the
    validation split, or on the training split with the weights as they stand
    at the end of the epoch when there is no validation split.
    """
    config = config.resolve()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))

    data = build_datasets(config)
    model = build_model(config, data)
    state = start_state(config)
    logger.info(f"Training {config.model} {list(config.layers)} for {config.hyper.epochs} epochs in {out}")

    def selection() -> float:
        return accuracy(model, data.validation if data.validation is not None else data.train)

    def test_accuracy() -> Optional[float]:
        return accuracy(model, data.test) if data.test is not None else None

    initial_error = 1.0 - accuracy(model, data.train)
    first = EpochMetrics(0, initial_error, 0, [0] * len(config.trained_widths), 0, 0,
                         state.schedule.sizes, None, test_accuracy())
    best = selection()
    if data.validation is not None:
        first.val_accuracy = best

    checkpoint_path = out / CHECKPOINT_FILE
    save_checkpoint(checkpoint_path, capture(config, model, data.encoder, state, best))
    best_epoch, best_test = 0, first.test_accuracy
    history = [first]

    with open(out / METRICS_FILE, "w") as stream:
        _write_record(stream, first)
        for _ in range(config.hyper.epochs):
            metrics = _run_epoch(model, data.train, state)
            score = selection()
            if data.validation is not None:
                metrics.val_accuracy = score
            metrics.test_accuracy = test_accuracy()
            schedule_step(state.schedule, score)
            _write_record(stream, metrics)
            history.append(metrics)

            logger.info(f"Epoch {metrics.epoch}: train error {metrics.train_error:.4f}, "
                        f"selection accuracy {score:.4f}, updates {metrics.updates}")
            if score > best:
                best, best_epoch, best_test = score, metrics.epoch, metrics.test_accuracy
                save_checkpoint(checkpoint_path, capture(config, model, data.encoder, state, best))

    logger.info(f"Best selection accuracy {best:.4f} at epoch {best_epoch}")
    return TrainReport(out, checkpoint_path, best_epoch, best, best_test, history)


def evaluate(checkpoint_path: str | Path, split_name: str = "test",
             data: Optional[DataSpec] = None) -> EvalReport:
    """Score a stored model on one split of its own data source (or of ``data``)."""
    config, model, encoder, _ = restore(load_checkpoint(checkpoint_path))
    if data is not None:
        config = replace(config, data=data).resolve()
    splits = load_splits(config)
    if split_name not in splits:
        raise DataError(f"no {split_name!r} split available; have {sorted(splits)}")
    model.verify()
    return report(model, encoder.encode(splits[split_name]))


def _sweep_point(config: RunConfig) -> float:
    return train_run(config).score


def sweep_points(axes: Dict[str, Sequence]) -> List[Dict[str, Any]]:
    if not 1 <= len(axes) <= 2:
        raise ConfigError(f"a sweep takes one or two axes, got {len(axes)}")
    names = list(axes)
    return [dict(zip(names, values)) for values in itertools.product(*(axes[n] for n in names))]


def run_sweep(template: RunConfig, axes: Dict[str, Sequence], seeds: Sequence[int],
              workers: Optional[int] = None) -> List[SweepRow]:
    """Cross product of the axes, each point trained once per seed.

    Rows keep the cross-product order whatever order the workers finish in.
    """
    points = sweep_points(axes)
    out = Path(template.output_dir)
    jobs: List[RunConfig] = []
    for i, point in enumerate(points):
        config = template
        for axis, value in point.items():
            config = config.with_axis(axis, value)
        for seed in seeds:
            jobs.append(replace(config, seed=seed, output_dir=str(out / f"point_{i:03d}" / f"seed_{seed}")))

    workers = workers or template.workers
    logger.info(f"Sweeping {len(points)} points x {len(seeds)} seeds on {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_sweep_point, jobs))
    else:
        scores = [_sweep_point(job) for job in jobs]

    rows = []
    for i, point in enumerate(points):
        runs = scores[i * len(seeds):(i + 1) * len(seeds)]
        rows.append(SweepRow(point, float(np.mean(runs)), float(np.std(runs)), runs))
        logger.info(f"Sweep point {point}: {rows[-1].mean:.4f} +/- {rows[-1].std:.4f}")

    write_sweep_table(out / SWEEP_FILE, rows)
    for axis in axes:
        write_plot_series(out / f"{axis}.dat", rows, axis)
    return rows


def write_sweep_table(path: Path, rows: List[SweepRow]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(rows[0].axes) if rows else []
    lines = ["\t".join(names + ["mean", "std", "runs"])]
    for row in rows:
        values = [str(row.axes[n]) for n in names]
        runs = ",".join(f"{r:.6f}" for r in row.runs)
        lines.append("\t".join(values + [f"{row.mean:.6f}", f"{row.std:.6f}", runs]))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_plot_series(path: Path, rows: List[SweepRow], axis: str) -> Path:
    """``x mean std`` per value of ``axis``, pooling runs over any other axis."""
    pooled: Dict[Any, List[float]] = {}
    for row in rows:
        pooled.setdefault(row.axes[axis], []).extend(row.runs)
    lines = [f"# {axis} mean std"]
    for value, runs in pooled.items():
        lines.append(f"{value} {np.mean(runs):.6f} {np.std(runs):.6f}")
    path.write_text("\n".join(lines) + "\n")
    return path


def make_frame(config: FrameSearchConfig, out: str | Path) -> Tuple[PrototypeFrame, Path]:
    frame = search_frame(config)
    if not self_test(frame):
        logger.warning(f"Frame {config.classes}x{config.dim} fails its self-test")
    return frame, save_frame(out, frame)


def generate_data(kind: str, out_dir: str | Path,
                  task: PrototypeTaskConfig | SequenceTaskConfig | None = None) -> List[Path]:
    """Write a synthetic task to disk in a format the loaders read back.

    Prototype tasks become feature files; sequence tasks become delimited
    series with one channel per frame bit.
    """
    out = Path(out_dir)
    if kind == "prototypes":
        train, test = gen_random_prototypes(task or PrototypeTaskConfig(seed=0))
        paths = [write_feature_file(out / "train.bin", train), write_feature_file(out / "test.bin", test)]
    elif kind == "sequences":
        train, test = gen_random_sequences(task or SequenceTaskConfig(seed=0))
        paths = [write_delimited_series(out / "train.txt", train), write_delimited_series(out / "test.txt", test)]
    else:
        raise ConfigError(f"cannot generate data of kind {kind!r}; choose prototypes or sequences")

    logger.info(f"Wrote {kind} task to: {out}")
    return paths
