"""Dataset ingestion and synthesis."""

import gzip
import json
import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from .bitcore import PackedBitMatrix
from .errors import ConfigError, DataError
from .types import PrototypeTaskConfig, SequenceTaskConfig


logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
IMAGE_EXTENSIONS = {'.jpg', '.jpeg', '.png', '.bmp', '.tiff', '.webp'}


@dataclass
class Dataset:
    """Raw samples: ``inputs`` is N x F (vectors) or N x T x F (sequences)."""
    inputs: np.ndarray
    labels: np.ndarray
    classes: int
    split: str = "train"
    label_names: Optional[List[str]] = None

    def __post_init__(self):
        """Validate shapes and label range."""
        self.inputs = np.asarray(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)

        if self.inputs.ndim not in (2, 3):
            raise DataError(f"inputs must be N x F or N x T x F, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DataError(f"{self.labels.size} labels for {self.inputs.shape[0]} samples")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(f"labels must lie in [0, {self.classes})")
        if self.label_names is not None and len(self.label_names) != self.classes:
            raise DataError("label_names must name every class")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def sequential(self) -> bool:
        return self.inputs.ndim == 3

    @property
    def steps(self) -> int:
        return self.inputs.shape[1] if self.sequential else 1

    @property
    def width(self) -> int:
        return self.inputs.shape[-1]

    def subset(self, indices, split: str) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return replace(self, inputs=self.inputs[indices], labels=self.labels[indices], split=split)


@dataclass
class EncodedDataset:
    """Binarized samples: one packed N x K matrix per time step (one for vectors)."""
    frames: Tuple[PackedBitMatrix, ...]
    labels: np.ndarray
    classes: int
    split: str = "train"

    def __post_init__(self):
        """Validate that every step holds the same samples."""
        self.frames = tuple(self.frames)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.frames:
            raise DataError("an encoded dataset needs at least one frame")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise DataError(f"frames disagree in shape: {sorted(shapes)}")
        if self.frames[0].rows != self.labels.size:
            raise DataError(f"{self.labels.size} labels for {self.frames[0].rows} samples")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def steps(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].cols

    def select(self, indices) -> "EncodedDataset":
        indices = np.asarray(indices, dtype=np.intp)
        return replace(self, frames=tuple(f.select(indices) for f in self.frames), labels=self.labels[indices])


def _flip(patterns: np.ndarray, flip_p: float, rng: np.random.Generator) -> np.ndarray:
    flips = rng.random(patterns.shape) < flip_p
    return np.where(flips, -patterns, patterns).astype(np.int8)


def gen_random_prototypes(cfg: PrototypeTaskConfig) -> Tuple[Dataset, Dataset]:
    """Noisy copies of C random +/-1 prototypes; train and test use disjoint streams."""
    proto_seq, train_seq, test_seq = np.random.SeedSequence(cfg.seed or 0).spawn(3)
    prototypes = np.random.default_rng(proto_seq).integers(0, 2, size=(cfg.classes, cfg.dim)).astype(np.int8) * 2 - 1

    def draw(n: int, seq, split: str) -> Dataset:
        rng = np.random.default_rng(seq)
        labels = rng.integers(0, cfg.classes, size=n)
        return Dataset(_flip(prototypes[labels], cfg.flip_p, rng), labels, cfg.classes, split)

    logger.info(f"Generated random prototypes: C={cfg.classes}, K_0={cfg.dim}, flip_p={cfg.flip_p}")
    return draw(cfg.n_train, train_seq, "train"), draw(cfg.n_test, test_seq, "test")


def gen_random_sequences(cfg: SequenceTaskConfig) -> Tuple[Dataset, Dataset]:
    """Noisy copies of one random +/-1 frame sequence per class."""
    proto_seq, train_seq, test_seq = np.random.SeedSequence(cfg.seed or 0).spawn(3)
    shape = (cfg.classes, cfg.steps, cfg.width)
    prototypes = np.random.default_rng(proto_seq).integers(0, 2, size=shape).astype(np.int8) * 2 - 1

    def draw(n: int, seq, split: str) -> Dataset:
        rng = np.random.default_rng(seq)
        labels = rng.integers(0, cfg.classes, size=n)
        return Dataset(_flip(prototypes[labels], cfg.flip_p, rng), labels, cfg.classes, split)

    logger.info(f"Generated random sequences: C={cfg.classes}, T={cfg.steps}, K_x={cfg.width}")
    return draw(cfg.n_train, train_seq, "train"), draw(cfg.n_test, test_seq, "test")


def _parse_label(text: str, where: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: label {text!r} is not a number")
    if not math.isfinite(value) or value != int(value):
        raise DataError(f"{where}: label {text!r} is not an integer")
    return int(value)


def _window(series: np.ndarray, steps: int) -> np.ndarray:
    """Trailing ``steps`` frames, left-padded by repeating the first frame."""
    if series.shape[0] >= steps:
        return series[series.shape[0] - steps:]
    pad = np.repeat(series[:1], steps - series.shape[0], axis=0)
    return np.concatenate([pad, series])


def load_delimited_series(
    path: str | Path,
    window_length: Optional[int] = None,
    label_column: int = 0,
    separator: Optional[str] = ",",
    channels: int = 1,
    label_map: Optional[Dict[int, int]] = None,
    split: str = "train",
) -> Dataset:
    """One labelled series per line; keeps the trailing window of each series.

    Values after the label are time-major (``channels`` values per step).
    Labels are remapped densely to 0..C-1 in ascending order of the raw label,
    unless ``label_map`` (raw -> class) is supplied, in which case a raw label
    outside it is an error. Trailing NaN steps are treated as a shorter series.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DataError(f"cannot read series file {path}: {e}") from e

    raw_labels: List[int] = []
    series: List[np.ndarray] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        fields = line.strip().split(separator)
        if label_column >= len(fields):
            raise DataError(f"{where}: no label column {label_column}")

        raw_labels.append(_parse_label(fields[label_column], where))
        try:
            values = np.array([float(v) for i, v in enumerate(fields) if i != label_column])
        except ValueError as e:
            raise DataError(f"{where}: {e}") from e

        if values.size == 0 or values.size % channels:
            raise DataError(f"{where}: {values.size} values do not form whole steps of {channels} channels")
        steps = values.reshape(-1, channels)

        finite = np.isfinite(steps).all(axis=1)
        keep = int(np.flatnonzero(finite).max()) + 1 if finite.any() else 0
        if keep == 0 or not finite[:keep].all():
            raise DataError(f"{where}: non-finite values inside the series")
        series.append(steps[:keep])

    if not series:
        raise DataError(f"no series found in {path}")

    if label_map is None:
        label_map = {raw: c for c, raw in enumerate(sorted(set(raw_labels)))}
    unknown = sorted(set(raw_labels) - set(label_map))
    if unknown:
        raise DataError(f"{path}: unknown labels {unknown}")

    longest = max(s.shape[0] for s in series)
    steps = min(window_length or longest, longest)
    inputs = np.stack([_window(s, steps) for s in series])
    labels = np.array([label_map[raw] for raw in raw_labels])
    names = [str(raw) for raw, _ in sorted(label_map.items(), key=lambda item: item[1])]

    logger.info(f"Loaded {len(series)} series from {path}: T={steps}, channels={channels}, C={len(label_map)}")
    return Dataset(inputs, labels, len(label_map), split, names)


def label_map_of(dataset: Dataset) -> Dict[int, int]:
    """Raw label -> class mapping recorded by ``load_delimited_series``."""
    if dataset.label_names is None:
        return {c: c for c in range(dataset.classes)}
    return {int(name): c for c, name in enumerate(dataset.label_names)}


def write_delimited_series(path: str | Path, dataset: Dataset, separator: str = ",") -> Path:
    """Write ``dataset`` in the layout ``load_delimited_series`` reads back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = dataset.label_names or [str(c) for c in range(dataset.classes)]

    with open(path, "w") as f:
        for sample, label in zip(dataset.inputs, dataset.labels):
            values = separator.join(repr(float(v)) for v in np.asarray(sample).ravel())
            f.write(f"{names[label]}{separator}{values}\n")
    return path


def _open_maybe_gzip(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path: Path, magic: int) -> Tuple[Tuple[int, ...], bytes]:
    try:
        with _open_maybe_gzip(path) as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read IDX file {path}: {e}") from e

    if len(blob) < 4:
        raise DataError(f"{path}: truncated IDX header")
    found, = struct.unpack_from(">I", blob)
    if found != magic:
        raise DataError(f"{path}: magic number mismatch ({found:#010x}, expected {magic:#010x})")

    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack_from(">" + "I" * ndim, blob, 4)

    expected = int(np.prod(dims, dtype=np.int64))
    payload = blob[header:]
    if len(payload) < expected:
        raise DataError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return dims, payload[:expected]


def load_idx_images(images_path: str | Path, labels_path: str | Path,
                    classes: Optional[int] = None, split: str = "train") -> Dataset:
    """Big-endian IDX image and label files (optionally gzipped); pixels stay 0-255."""
    dims, pixels = _read_idx(Path(images_path), IDX_IMAGE_MAGIC)
    (count,), labels = _read_idx(Path(labels_path), IDX_LABEL_MAGIC)
    if count != dims[0]:
        raise DataError(f"{dims[0]} images but {count} labels")

    images = np.frombuffer(pixels, dtype=np.uint8).reshape(dims[0], dims[1] * dims[2])
    labels = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    if classes is None:
        classes = int(labels.max()) + 1 if labels.size else 0

    logger.info(f"Loaded {dims[0]} IDX images of {dims[1]}x{dims[2]} from {images_path}")
    return Dataset(images, labels, classes, split)


def load_feature_file(path: str | Path, classes: Optional[int] = None, split: str = "train") -> Dataset:
    """Flat little-endian array with a ``<path>.json`` sidecar: dtype, shape, labels."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    try:
        meta = json.loads(sidecar.read_text())
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read feature file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{sidecar}: {e}") from e

    try:
        dtype = np.dtype(meta["dtype"])
        shape = tuple(meta["shape"])
        labels = np.asarray(meta["labels"], dtype=np.int64)
    except (KeyError, TypeError) as e:
        raise DataError(f"{sidecar}: missing or invalid field {e}") from e

    if dtype.kind not in "iuf" or dtype.byteorder == ">":
        raise DataError(f"{sidecar}: dtype must be little-endian numeric, got {dtype.str}")
    if len(blob) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
        raise DataError(f"{path}: {len(blob)} bytes do not match shape {shape} of {dtype.str}")

    features = np.frombuffer(blob, dtype=dtype).reshape(shape).astype(np.float64)
    if not np.isfinite(features).all():
        raise DataError(f"{path}: non-finite feature values")
    classes = classes or meta.get("classes") or (int(labels.max()) + 1 if labels.size else 0)
    return Dataset(features, labels, classes, split)


def write_feature_file(path: str | Path, dataset: Dataset, dtype: str = "<f4") -> Path:
    """Write ``dataset`` as a flat array plus the JSON sidecar ``load_feature_file`` expects."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = np.ascontiguousarray(dataset.inputs, dtype=np.dtype(dtype))
    path.write_bytes(features.tobytes())

    meta = {
        "dtype": features.dtype.str,
        "shape": list(features.shape),
        "labels": dataset.labels.tolist(),
        "classes": dataset.classes,
    }
    path.with_name(path.name + ".json").write_text(json.dumps(meta))
    return path


def load_image_folder(root: str | Path, size: Optional[Tuple[int, int]] = None, split: str = "train") -> Dataset:
    """One sub-directory per class; images are read as 8-bit grayscale."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"image folder does not exist: {root}")

    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    images, labels = [], []
    for label, class_dir in enumerate(class_dirs):
        for file_path in sorted(class_dir.iterdir()):
            if file_path.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            try:
                with Image.open(file_path) as img:
                    img = img.convert("L")
                    if size is not None:
                        img = img.resize(size, Image.Resampling.LANCZOS)
                    images.append(np.asarray(img, dtype=np.uint8))
            except OSError as e:
                raise DataError(f"cannot read image {file_path}: {e}") from e
            labels.append(label)

    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise DataError(f"images in {root} differ in size {sorted(shapes)}; pass a size to resize them")

    width = images[0].size if images else 0
    inputs = np.stack([img.ravel() for img in images]) if images else np.zeros((0, width), dtype=np.uint8)
    logger.info(f"Loaded {len(images)} images in {len(class_dirs)} classes from {root}")
    return Dataset(inputs, np.array(labels, dtype=np.int64), len(class_dirs), split,
                   [d.name for d in class_dirs])


def split(dataset: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Stratified seeded split; ``fraction`` of each class goes to the first part.

    Every class with at least two samples keeps one on each side.
    """
    if not 0 < fraction < 1:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")

    rng = np.random.default_rng(seed)
    first, second = [], []
    for c in range(dataset.classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))
        if members.size == 0:
            continue
        k = round(fraction * members.size)
        if members.size >= 2:
            k = min(max(k, 1), members.size - 1)
        else:
            k = members.size
        first.extend(members[:k].tolist())
        second.extend(members[k:].tolist())

    if not first or not second:
        raise DataError(f"cannot split {len(dataset)} samples at fraction {fraction}")
    return (dataset.subset(sorted(first), dataset.split),
            dataset.subset(sorted(second), "validation"))
