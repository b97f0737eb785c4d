"""Input binarization: sign packing, median / thermometer codes, fixed expansion."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .bitcore import BitVector, PackedBitMatrix, matmul_pm1, matvec_pm1, sign_rows, sign_to_bits
from .data import Dataset, EncodedDataset
from .errors import DataError, DimensionError
from .types import EncoderSpec


logger = logging.getLogger(__name__)


def _real_matrix(values, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"{name} must be a 2-D array, got shape {values.shape}")
    if values.shape[0] == 0:
        raise DataError(f"{name} is empty")
    if not np.isfinite(values).all():
        raise DataError(f"{name} contains non-finite values")
    return values


@dataclass(frozen=True, eq=False)
class ThermometerCodec:
    """Per-feature ascending thresholds; ``bits_per_feature`` bits per feature."""

    bits_per_feature: int
    thresholds: np.ndarray

    def __post_init__(self):
        """Validate and freeze the threshold table."""
        thresholds = np.array(self.thresholds, dtype=np.float64)
        if thresholds.ndim != 2 or thresholds.shape[1] != self.bits_per_feature:
            raise ValueError(f"thresholds must be F x {self.bits_per_feature}, got {thresholds.shape}")
        if np.any(np.diff(thresholds, axis=1) < 0):
            raise ValueError("thresholds must be non-decreasing per feature")
        thresholds.setflags(write=False)
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def features(self) -> int:
        return self.thresholds.shape[0]

    @property
    def width(self) -> int:
        return self.features * self.bits_per_feature


def fit_thermometer(train_features, bits: int) -> ThermometerCodec:
    """Equal-mass thresholds: nearest-rank quantiles at k / (bits + 1), k = 1..bits."""
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    values = _real_matrix(train_features, "training features")
    levels = np.arange(1, bits + 1) / (bits + 1)
    thresholds = np.quantile(values, levels, axis=0, method="inverted_cdf").T
    return ThermometerCodec(bits, thresholds)


def fit_median(train_features) -> ThermometerCodec:
    """Per-feature training medians, as a one-bit thermometer."""
    return fit_thermometer(train_features, 1)


def _thermometer_bits(codec: ThermometerCodec, rows: np.ndarray) -> np.ndarray:
    if rows.shape[-1] != codec.features:
        raise DimensionError(f"row width {rows.shape[-1]} != codec width {codec.features}")
    # bit (f, k) is +1 iff value_f > threshold_{f, k}; features stay contiguous
    return (rows[..., :, None] > codec.thresholds).reshape(*rows.shape[:-1], codec.width)


def encode_thermometer(codec: ThermometerCodec, row) -> BitVector:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise DimensionError("encode_thermometer takes a single row")
    return BitVector.from_bits(_thermometer_bits(codec, row))


def encode_thermometer_rows(codec: ThermometerCodec, rows) -> PackedBitMatrix:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise DimensionError("encode_thermometer_rows takes a 2-D array")
    return PackedBitMatrix.from_bits(_thermometer_bits(codec, rows))


def binarize_median(images, codec: Optional[ThermometerCodec] = None) -> PackedBitMatrix:
    """+1 where a pixel is strictly above its median; medians come from ``images`` unless given."""
    images = _real_matrix(images, "images")
    return encode_thermometer_rows(codec or fit_median(images), images)


def encode_sign(values) -> PackedBitMatrix:
    """Pack inputs that are already binary: +1 for positive entries, -1 otherwise."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise DimensionError("encode_sign takes a 2-D array")
    return PackedBitMatrix.from_bits(values > 0)


@dataclass(frozen=True, eq=False)
class ExpansionLayer:
    """Fixed random +/-1 projection from the code width to ``out_width``."""

    projection: PackedBitMatrix
    seed: int

    @property
    def in_width(self) -> int:
        return self.projection.cols

    @property
    def out_width(self) -> int:
        return self.projection.rows


def make_expansion(out_width: int, in_width: int, seed: int) -> ExpansionLayer:
    """I.i.d. fair +/-1 entries; the same seed always yields the same projection."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(out_width, in_width), dtype=np.uint8).astype(bool)
    return ExpansionLayer(PackedBitMatrix.from_bits(bits), seed)


def expand(layer: ExpansionLayer, code: BitVector) -> BitVector:
    if code.length != layer.in_width:
        raise DimensionError(f"code width {code.length} != expansion input width {layer.in_width}")
    return sign_to_bits(matvec_pm1(layer.projection, code))


def expand_rows(layer: ExpansionLayer, codes: PackedBitMatrix) -> PackedBitMatrix:
    if codes.cols != layer.in_width:
        raise DimensionError(f"code width {codes.cols} != expansion input width {layer.in_width}")
    return sign_rows(matmul_pm1(layer.projection, codes))


@dataclass(frozen=True, eq=False)
class Encoder:
    """A fitted input pipeline: code each frame, then optionally expand it."""

    spec: EncoderSpec
    input_width: int
    codec: Optional[ThermometerCodec] = None
    expansion: Optional[ExpansionLayer] = None

    @classmethod
    def fit(cls, spec: EncoderSpec, train: Dataset) -> "Encoder":
        """Fit thresholds on the training rows only (every frame of every sequence)."""
        rows = train.inputs.reshape(-1, train.width)
        codec = None
        if spec.kind == "median":
            codec = fit_median(rows)
        elif spec.kind == "thermometer":
            codec = fit_thermometer(rows, spec.bits)
        return cls.build(spec, train.width, codec)

    @classmethod
    def build(cls, spec: EncoderSpec, input_width: int, codec: Optional[ThermometerCodec] = None) -> "Encoder":
        code_width = codec.width if codec is not None else input_width
        expansion = None
        if spec.expansion is not None:
            expansion = make_expansion(spec.expansion, code_width, spec.expansion_seed or 0)
        logger.info(f"Encoder {spec.kind}: {input_width} features -> {code_width} bits"
                    + (f" -> expanded to {spec.expansion}" if expansion else ""))
        return cls(spec, input_width, codec, expansion)

    @property
    def output_width(self) -> int:
        if self.expansion is not None:
            return self.expansion.out_width
        return self.codec.width if self.codec is not None else self.input_width

    def encode_rows(self, rows) -> PackedBitMatrix:
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] != self.input_width:
            raise DimensionError(f"expected rows of width {self.input_width}, got shape {rows.shape}")
        if self.codec is None:
            codes = encode_sign(rows)
        else:
            codes = encode_thermometer_rows(self.codec, rows)
        return expand_rows(self.expansion, codes) if self.expansion is not None else codes

    def encode(self, dataset: Dataset) -> EncodedDataset:
        """Encode every sample; sequences are encoded frame by frame."""
        if dataset.sequential:
            frames = tuple(self.encode_rows(dataset.inputs[:, t, :]) for t in range(dataset.steps))
        else:
            frames = (self.encode_rows(dataset.inputs),)
        return EncodedDataset(frames, dataset.labels, dataset.classes, dataset.split)

    def to_state(self) -> Dict[str, Any]:
        """Serializable description; thresholds travel separately as an array."""
        return {
            "kind": self.spec.kind,
            "bits": self.spec.bits,
            "expansion": self.spec.expansion,
            "expansion_seed": self.spec.expansion_seed,
            "input_width": self.input_width,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any], thresholds: Optional[np.ndarray]) -> "Encoder":
        """Rebuild a fitted encoder; the expansion projection is regenerated from its seed."""
        spec = EncoderSpec(state["kind"], state["bits"], state["expansion"], state["expansion_seed"])
        codec = ThermometerCodec(spec.bits, thresholds) if thresholds is not None else None
        return cls.build(spec, state["input_width"], codec)
