"""Binary checkpoint format.

Layout::

    b"BEPC" | u16 version | u8 kind | u8 weight_bits | u32 metadata length
    | canonical JSON metadata | little-endian blobs

The metadata lists every blob (name, dtype, shape) in storage order. Hidden
weights are stored at the narrowest signed width holding ``weight_bits``;
the frame as packed words; thermometer thresholds as float64. Expansion
projections are regenerated from their seed and never stored.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .bep import Layer, Network, TrainState
from .beptt import RnnModel
from .bitcore import PackedBitMatrix
from .config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .encode import Encoder
from .errors import DataError
from .frames import PrototypeFrame
from .types import RunConfig


logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sHBBI")
_KINDS = {"mlp": 0, "rnn": 1}
_RNN_MATRICES = ("H_xs", "H_ss", "H_sy")


def weight_dtype(weight_bits: int) -> np.dtype:
    for dtype in ("<i1", "<i2", "<i4"):
        if weight_bits <= np.dtype(dtype).itemsize * 8:
            return np.dtype(dtype)
    raise ValueError(f"no storage width for {weight_bits}-bit weights")


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a run."""
    kind: str
    weight_bits: int
    blobs: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_mapping(self.meta["config"])

    @property
    def epoch(self) -> int:
        return self.meta["epoch"]

    @property
    def accuracy(self) -> Optional[float]:
        return self.meta.get("accuracy")


def _matrices(model: Network | RnnModel) -> Dict[str, np.ndarray]:
    if isinstance(model, RnnModel):
        return dict(zip(_RNN_MATRICES, (layer.H for layer in model.layers)))
    return {f"H_{l + 1}": layer.H for l, layer in enumerate(model.layers)}


def capture(config: RunConfig, model: Network | RnnModel, encoder: Encoder, state: TrainState,
            accuracy: Optional[float]) -> Checkpoint:
    """Snapshot a run; arrays are copied so later training does not alter it."""
    dtype = weight_dtype(model.hyper.weight_bits)
    blobs = {name: H.astype(dtype) for name, H in _matrices(model).items()}
    blobs["frame"] = model.frame.prototypes.data.copy()
    if encoder.codec is not None:
        blobs["thresholds"] = np.array(encoder.codec.thresholds, dtype=np.float64)

    meta = {
        "config": config.to_dict(),
        "encoder": encoder.to_state(),
        "frame": {"classes": model.frame.classes, "dim": model.frame.dim, "seed": model.frame.seed},
        "state": state.to_dict(),
        "epoch": state.epoch,
        "accuracy": accuracy,
    }
    return Checkpoint(config.model, model.hyper.weight_bits, blobs, meta)


def restore(checkpoint: Checkpoint) -> Tuple[RunConfig, Network | RnnModel, Encoder, TrainState]:
    """Rebuild the configuration, model, fitted encoder and training state."""
    try:
        config = checkpoint.config
        hyper = config.hyper
        frame_meta = checkpoint.meta["frame"]
        frame = PrototypeFrame.from_prototypes(
            PackedBitMatrix(frame_meta["classes"], frame_meta["dim"], checkpoint.blobs["frame"]),
            frame_meta["seed"],
        )

        def layer(name: str) -> Layer:
            return Layer(checkpoint.blobs[name].astype(np.int64), hyper.weight_bits)

        if checkpoint.kind == "rnn":
            model = RnnModel(*(layer(name) for name in _RNN_MATRICES), frame, hyper)
        else:
            model = Network([layer(f"H_{l + 1}") for l in range(len(config.layers))], frame, hyper)

        encoder = Encoder.from_state(checkpoint.meta["encoder"], checkpoint.blobs.get("thresholds"))
        state = TrainState.from_dict(config.trained_widths, checkpoint.meta["state"])
    except (KeyError, ValueError, TypeError) as e:
        raise DataError(f"checkpoint contents are inconsistent: {e}") from e

    if len(state.layer_rngs) != len(config.trained_widths):
        raise DataError("checkpoint holds the wrong number of random streams")
    return config, model, encoder, state


def to_bytes(checkpoint: Checkpoint) -> bytes:
    directory = [
        {"name": name, "dtype": blob.dtype.str, "shape": list(blob.shape)}
        for name, blob in checkpoint.blobs.items()
    ]
    meta = dict(checkpoint.meta, blobs=directory)
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _KINDS[checkpoint.kind],
                          checkpoint.weight_bits, len(text))
    body = b"".join(
        np.ascontiguousarray(blob, dtype=blob.dtype.newbyteorder("<")).tobytes()
        for blob in checkpoint.blobs.values()
    )
    return header + text + body


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _HEADER.size:
        raise DataError(f"checkpoint truncated: {len(blob)} bytes")
    magic, version, kind_code, weight_bits, meta_length = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    kinds = {code: name for name, code in _KINDS.items()}
    if kind_code not in kinds:
        raise DataError(f"unknown model kind code {kind_code}")

    offset = _HEADER.size + meta_length
    if len(blob) < offset:
        raise DataError("checkpoint metadata truncated")
    try:
        meta = json.loads(blob[_HEADER.size:offset].decode("utf-8"))
        directory = meta.pop("blobs")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as e:
        raise DataError(f"corrupt checkpoint metadata: {e}") from e

    arrays = {}
    for entry in directory:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        size = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if len(blob) < offset + size:
            raise DataError(f"checkpoint blob {entry['name']!r} truncated")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=dtype, count=size // dtype.itemsize,
                                              offset=offset).reshape(shape).copy()
        offset += size
    if offset != len(blob):
        raise DataError(f"{len(blob) - offset} trailing bytes after the last blob")

    return Checkpoint(kinds[kind_code], weight_bits, arrays, meta)


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(checkpoint))
    logger.info(f"Saved checkpoint (epoch {checkpoint.epoch}) to: {path}")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    return from_bytes(blob)
