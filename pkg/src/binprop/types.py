"""Data types for binprop configuration and reports."""

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .config import (
    DEFAULT_CLASSES,
    DEFAULT_EPOCHS,
    DEFAULT_FRAME_ALPHA,
    DEFAULT_GATE_THRESHOLD,
    DEFAULT_GROUP_SIZE,
    DEFAULT_MARGIN,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_PATIENCE,
    DEFAULT_PROTOTYPE_DIM,
    DEFAULT_PROTOTYPE_FLIP,
    DEFAULT_PROTOTYPE_TEST,
    DEFAULT_PROTOTYPE_TRAIN,
    DEFAULT_REINFORCEMENT,
    DEFAULT_VALIDATION_FRACTION,
    DEFAULT_WEIGHT_BITS,
    DEFAULT_WORKERS,
    FRAME_ITERATIONS_PER_ENTRY,
    SWEEP_AXES,
)
from .errors import ConfigError

MODEL_KINDS = ("mlp", "rnn")
ENCODER_KINDS = ("none", "median", "thermometer")
DATA_KINDS = ("prototypes", "sequences", "idx", "delimited", "features", "images")


def _unit_interval(name: str, value: float, *, open_low: bool = False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a number")
    if open_low and not 0 < value <= 1:
        raise ConfigError(f"{name} must be in (0, 1], got {value}")
    if not open_low and not 0 <= value <= 1:
        raise ConfigError(f"{name} must be in [0, 1], got {value}")


def _positive_int(name: str, value, *, allow_zero: bool = False):
    low = 0 if allow_zero else 1
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < low:
        raise ConfigError(f"{name} must be an integer >= {low}, got {value!r}")


@dataclass
class Hyperparams:
    """Training hyperparameters shared by the feedforward and recurrent engines."""
    r: float = DEFAULT_MARGIN
    nu: float = DEFAULT_GATE_THRESHOLD
    p_r: float = DEFAULT_REINFORCEMENT
    gamma0: Tuple[int, ...] | int = DEFAULT_GROUP_SIZE
    epochs: int = DEFAULT_EPOCHS
    batch_size: Optional[int] = None
    weight_bits: int = DEFAULT_WEIGHT_BITS
    stagnation_patience: int = DEFAULT_PATIENCE
    horizon: Optional[int] = None
    sy_step: int = 1

    def __post_init__(self):
        """Validate hyperparameter ranges."""
        _unit_interval("r", self.r, open_low=True)
        _unit_interval("nu", self.nu)
        _unit_interval("p_r", self.p_r)
        _positive_int("epochs", self.epochs, allow_zero=True)
        _positive_int("stagnation_patience", self.stagnation_patience)

        if isinstance(self.gamma0, (list, tuple)):
            self.gamma0 = tuple(self.gamma0)
            for g in self.gamma0:
                _positive_int("gamma0", g)
        else:
            _positive_int("gamma0", self.gamma0)

        if self.batch_size is not None:
            _positive_int("batch_size", self.batch_size)
        if self.horizon is not None:
            _positive_int("horizon", self.horizon)

        if not isinstance(self.weight_bits, int) or not 3 <= self.weight_bits <= 32:
            raise ConfigError(f"weight_bits must be an integer in [3, 32], got {self.weight_bits!r}")

        if self.sy_step not in (1, 2):
            raise ConfigError(f"sy_step must be 1 or 2, got {self.sy_step!r}")

    def group_sizes(self, widths: List[int]) -> List[int]:
        """Initial group size per layer, checked against each layer width."""
        if isinstance(self.gamma0, tuple):
            if len(self.gamma0) != len(widths):
                raise ConfigError(f"gamma0 lists {len(self.gamma0)} sizes for {len(widths)} layers")
            sizes = list(self.gamma0)
        else:
            sizes = [self.gamma0] * len(widths)

        for size, width in zip(sizes, widths):
            if width % size:
                raise ConfigError(f"group size {size} does not divide layer width {width}")
        return sizes


@dataclass
class FrameSearchConfig:
    """Parameters of the prototype frame local search."""
    classes: int
    dim: int
    alpha: float = DEFAULT_FRAME_ALPHA
    iterations: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        """Validate frame search parameters."""
        if not isinstance(self.classes, int) or self.classes < 2:
            raise ConfigError("classes must be an integer >= 2")
        _positive_int("dim", self.dim)
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not 0 <= self.seed < 2**32:
            raise ConfigError("frame seed must fit in 32 bits")
        if self.iterations is None:
            self.iterations = FRAME_ITERATIONS_PER_ENTRY * self.classes * self.dim
        _positive_int("iterations", self.iterations, allow_zero=True)


@dataclass
class PrototypeTaskConfig:
    """Random Prototypes task: noisy copies of C random +/-1 prototypes."""
    n_train: int = DEFAULT_PROTOTYPE_TRAIN
    n_test: int = DEFAULT_PROTOTYPE_TEST
    dim: int = DEFAULT_PROTOTYPE_DIM
    classes: int = DEFAULT_CLASSES
    flip_p: float = DEFAULT_PROTOTYPE_FLIP
    seed: Optional[int] = None

    def __post_init__(self):
        """Validate task parameters."""
        _positive_int("n_train", self.n_train, allow_zero=True)
        _positive_int("n_test", self.n_test, allow_zero=True)
        _positive_int("dim", self.dim)
        if not isinstance(self.classes, int) or self.classes < 2:
            raise ConfigError("classes must be an integer >= 2")
        _unit_interval("flip_p", self.flip_p)


@dataclass
class SequenceTaskConfig:
    """Random sequence task: each class is a prototype sequence of ``steps`` frames."""
    n_train: int = 2000
    n_test: int = 500
    steps: int = 8
    width: int = 64
    classes: int = 5
    flip_p: float = 0.15
    seed: Optional[int] = None

    def __post_init__(self):
        """Validate task parameters."""
        _positive_int("n_train", self.n_train, allow_zero=True)
        _positive_int("n_test", self.n_test, allow_zero=True)
        _positive_int("steps", self.steps)
        _positive_int("width", self.width)
        if not isinstance(self.classes, int) or self.classes < 2:
            raise ConfigError("classes must be an integer >= 2")
        _unit_interval("flip_p", self.flip_p)


@dataclass
class EncoderSpec:
    """Input binarization: identity, median, or thermometer plus optional expansion."""
    kind: str = "none"
    bits: int = 1
    expansion: Optional[int] = None
    expansion_seed: Optional[int] = None

    def __post_init__(self):
        """Validate encoder choice."""
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        _positive_int("bits", self.bits)
        if self.kind == "median" and self.bits != 1:
            raise ConfigError("median encoding uses exactly one bit per feature")
        if self.expansion is not None:
            _positive_int("expansion", self.expansion)


@dataclass
class DataSpec:
    """Where the samples come from and how they are split."""
    kind: str = "prototypes"
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    train_labels: Optional[str] = None
    test_labels: Optional[str] = None
    window: Optional[int] = None
    separator: str = ","
    channels: int = 1
    image_size: Optional[Tuple[int, int]] = None
    validation_fraction: float = DEFAULT_VALIDATION_FRACTION
    prototypes: PrototypeTaskConfig = field(default_factory=PrototypeTaskConfig)
    sequences: SequenceTaskConfig = field(default_factory=SequenceTaskConfig)

    def __post_init__(self):
        """Validate data source settings."""
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"data kind must be one of {DATA_KINDS}, got {self.kind!r}")
        if self.kind in ("idx", "delimited", "features", "images") and not self.train_path:
            raise ConfigError(f"data kind {self.kind!r} requires train_path")
        if self.kind == "idx" and not self.train_labels:
            raise ConfigError("idx data requires train_labels")
        if self.window is not None:
            _positive_int("window", self.window)
        _positive_int("channels", self.channels)
        if self.image_size is not None:
            self.image_size = tuple(self.image_size)
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in [0, 1)")

    @property
    def sequential(self) -> bool:
        return self.kind in ("sequences", "delimited")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "DataSpec":
        """Build from the ``[data]`` table of a config, task sub-tables included."""
        data = dict(mapping)
        try:
            if "prototypes" in data:
                data["prototypes"] = PrototypeTaskConfig(**data["prototypes"])
            if "sequences" in data:
                data["sequences"] = SequenceTaskConfig(**data["sequences"])
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid data config: {e}") from e


@dataclass
class FrameSpec:
    """Load a stored frame, or search one with these settings."""
    path: Optional[str] = None
    alpha: float = DEFAULT_FRAME_ALPHA
    iterations: Optional[int] = None
    seed: Optional[int] = None


@dataclass
class Seeds:
    """Every random stream a run draws from."""
    data: int
    split: int
    frame: int
    init: int
    train: int
    expansion: int

    @classmethod
    def derive(cls, seed: int) -> "Seeds":
        state = np.random.SeedSequence(seed).generate_state(6)
        return cls(*(int(s) for s in state))


@dataclass
class RunConfig:
    """One training run: model, data, encoder, frame and hyperparameters."""
    model: str = "mlp"
    layers: Tuple[int, ...] = (1035, 1035)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    data: DataSpec = field(default_factory=DataSpec)
    frame: FrameSpec = field(default_factory=FrameSpec)
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    workers: int = DEFAULT_WORKERS
    seeds: Optional[Seeds] = None

    def __post_init__(self):
        """Validate model shape and cross-field consistency."""
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")

        self.layers = tuple(self.layers)
        if not self.layers:
            raise ConfigError("at least one layer width is required")
        for width in self.layers:
            _positive_int("layer width", width)

        if self.model == "rnn":
            if len(self.layers) != 2:
                raise ConfigError("rnn layers must be (K_s, K_y)")
            if not self.data.sequential:
                raise ConfigError(f"rnn models need sequence data, got {self.data.kind!r}")
        elif self.data.sequential:
            raise ConfigError(f"mlp models need vector data, got {self.data.kind!r}")

        _positive_int("workers", self.workers)
        self.hyper.group_sizes(self.trained_widths)

    @property
    def trained_widths(self) -> List[int]:
        """Output width of each trained matrix group, in schedule order."""
        return list(self.layers)

    def resolve(self) -> "RunConfig":
        """Copy with every seed made explicit."""
        seeds = self.seeds or Seeds.derive(self.seed)
        data = self.data
        if data.prototypes.seed is None:
            data = replace(data, prototypes=replace(data.prototypes, seed=seeds.data))
        if data.sequences.seed is None:
            data = replace(data, sequences=replace(data.sequences, seed=seeds.data))

        frame = self.frame if self.frame.seed is not None else replace(self.frame, seed=seeds.frame)
        encoder = self.encoder
        if encoder.expansion is not None and encoder.expansion_seed is None:
            encoder = replace(encoder, expansion_seed=seeds.expansion)

        return replace(self, data=data, frame=frame, encoder=encoder, seeds=seeds)

    def with_axis(self, axis: str, value) -> "RunConfig":
        """Copy with one sweep axis set to ``value``."""
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")

        if axis in ("nu", "r", "p_r"):
            return replace(self, hyper=replace(self.hyper, **{axis: float(value)}), seeds=None)
        if axis == "gamma0":
            return replace(self, hyper=replace(self.hyper, gamma0=int(value)), seeds=None)
        if axis == "horizon":
            return replace(self, hyper=replace(self.hyper, horizon=int(value)), seeds=None)
        if axis == "bits":
            encoder = replace(self.encoder, kind="thermometer", bits=int(value))
            return replace(self, encoder=encoder, seeds=None)
        if self.data.kind != "delimited":
            raise ConfigError(f"the window axis needs delimited series data, not {self.data.kind!r}")
        return replace(self, data=replace(self.data, window=int(value)), seeds=None)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "RunConfig":
        """Build from a nested mapping such as a parsed TOML file."""
        mapping = dict(mapping)
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        try:
            data = DataSpec.from_mapping(mapping.pop("data", {}))
            seeds = mapping.pop("seeds", None)

            return cls(
                hyper=Hyperparams(**mapping.pop("hyper", {})),
                encoder=EncoderSpec(**mapping.pop("encoder", {})),
                data=data,
                frame=FrameSpec(**mapping.pop("frame", {})),
                seeds=Seeds(**seeds) if seeds else None,
                **mapping,
            )
        except TypeError as e:
            raise ConfigError(f"invalid config: {e}") from e


@dataclass
class EpochMetrics:
    """One epoch of training as written to the metrics log."""
    epoch: int
    train_error: float
    triggered: int
    updates: List[int]
    saturations: int
    reinforced: int
    group_sizes: List[int]
    val_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None

    def to_record(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EvalReport:
    """Accuracy, confusion counts and mean normalized margin on one dataset."""
    count: int
    accuracy: float
    confusion: List[List[int]]
    mean_margin: float

    def __post_init__(self):
        """Validate report."""
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if len(self.confusion) and sum(map(sum, self.confusion)) != self.count:
            raise ValueError("confusion counts must sum to count")


@dataclass
class SweepRow:
    """Seed-averaged result for one point of a sweep."""
    axes: Dict[str, Any]
    mean: float
    std: float
    runs: List[float]
