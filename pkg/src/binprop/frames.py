"""Fixed binary classifier: a near-equiangular frame of +/-1 class prototypes."""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .bitcore import BitVector, IntVector, PackedBitMatrix, matmul_pm1, matvec_pm1
from .config import FRAME_MAGIC, FRAME_VERSION
from .errors import DataError, DimensionError, InvariantError
from .types import FrameSearchConfig


logger = logging.getLogger(__name__)

# magic, version, classes, dim, seed
_FRAME_HEADER = struct.Struct("<4sHHII")


@dataclass(frozen=True, eq=False)
class PrototypeFrame:
    """C prototype rows of width D with their cached Gram matrix."""

    prototypes: PackedBitMatrix
    gram: np.ndarray
    seed: int = 0

    def __post_init__(self):
        """Validate the Gram cache shape and its structural invariants."""
        classes, dim = self.prototypes.shape
        gram = np.asarray(self.gram, dtype=np.int64)
        if gram.shape != (classes, classes):
            raise ValueError(f"gram must be {classes}x{classes}, got {gram.shape}")
        if np.any(np.diag(gram) != dim) or np.any(gram != gram.T):
            raise ValueError("gram must be symmetric with the dimension on the diagonal")
        if np.any((gram - dim) % 2):
            raise ValueError("gram entries must share the parity of the dimension")

        gram = gram.copy()
        gram.setflags(write=False)
        object.__setattr__(self, "gram", gram)

    @classmethod
    def from_prototypes(cls, prototypes: PackedBitMatrix, seed: int = 0) -> "PrototypeFrame":
        return cls(prototypes, matmul_pm1(prototypes, prototypes), seed)

    @property
    def classes(self) -> int:
        return self.prototypes.rows

    @property
    def dim(self) -> int:
        return self.prototypes.cols

    def prototype(self, c: int) -> BitVector:
        return self.prototypes.row(c)

    def verify(self):
        """Raise InvariantError unless the Gram cache matches the prototypes."""
        if not np.array_equal(self.gram, matmul_pm1(self.prototypes, self.prototypes)):
            raise InvariantError("frame gram cache is stale")


def frame_cost(frame: PrototypeFrame, alpha: float) -> float:
    """Sum of off-diagonal inner products plus ``alpha`` times their population variance."""
    if frame.classes < 2:
        raise ValueError("frame cost needs at least two prototypes")
    pairs = frame.gram[np.triu_indices(frame.classes, 1)]
    return float(pairs.sum() + alpha * pairs.var())


def _flip_change(vectors, gram, pair_sum, pair_squares, pairs, alpha, i, k):
    """Cost change of flipping ``vectors[i][k]``, scaled by ``pairs ** 2``.

    Returns the scaled change and the sum / sum-of-squares increments.
    """
    vi = vectors[i][k]
    row = gram[i]
    d_sum = 0
    d_squares = 0
    for j, vj in enumerate(vectors):
        if j == i:
            continue
        d = -2 * vi * vj[k]
        d_sum += d
        d_squares += d * (2 * row[j] + d)

    new_sum = pair_sum + d_sum
    scaled = d_sum * pairs * pairs + alpha * (d_squares * pairs - (new_sum * new_sum - pair_sum * pair_sum))
    return scaled, d_sum, d_squares


def flip_cost_delta(frame: PrototypeFrame, alpha: float, i: int, k: int) -> float:
    """Cost change of flipping coordinate ``k`` of prototype ``i``, from the Gram cache."""
    vectors = frame.prototypes.to_pm1().astype(int).tolist()
    gram = frame.gram.tolist()
    pairs = frame.classes * (frame.classes - 1) // 2
    off = frame.gram[np.triu_indices(frame.classes, 1)]
    scaled, _, _ = _flip_change(
        vectors, gram, int(off.sum()), int((off * off).sum()), pairs, alpha, i, k
    )
    return scaled / (pairs * pairs)


def search_frame(config: FrameSearchConfig, cost_trace: Optional[List[float]] = None) -> PrototypeFrame:
    """Greedy coordinate-flip descent on the frame cost.

    Starts from seeded random prototypes and accepts a flip only when it
    strictly lowers the cost. When ``cost_trace`` is given, the initial cost
    and the cost after every accepted flip are appended to it.
    """
    rng = np.random.default_rng(config.seed)
    classes, dim, alpha = config.classes, config.dim, config.alpha
    start = rng.integers(0, 2, size=(classes, dim), dtype=np.int64) * 2 - 1

    vectors = start.tolist()
    gram = (start @ start.T).tolist()
    pairs = classes * (classes - 1) // 2
    pair_sum = sum(gram[i][j] for i in range(classes) for j in range(i + 1, classes))
    pair_squares = sum(gram[i][j] ** 2 for i in range(classes) for j in range(i + 1, classes))

    def cost() -> float:
        mean = pair_sum / pairs
        return pair_sum + alpha * (pair_squares / pairs - mean * mean)

    if cost_trace is not None:
        cost_trace.append(cost())

    accepted = 0
    if config.iterations:
        picks = zip(
            rng.integers(0, classes, size=config.iterations).tolist(),
            rng.integers(0, dim, size=config.iterations).tolist(),
        )
        for i, k in picks:
            scaled, d_sum, d_squares = _flip_change(
                vectors, gram, pair_sum, pair_squares, pairs, alpha, i, k
            )
            if scaled >= 0:
                continue

            vi = vectors[i][k]
            for j in range(classes):
                if j != i:
                    d = -2 * vi * vectors[j][k]
                    gram[i][j] += d
                    gram[j][i] += d
            vectors[i][k] = -vi
            pair_sum += d_sum
            pair_squares += d_squares
            accepted += 1
            if cost_trace is not None:
                cost_trace.append(cost())

    logger.debug(f"Frame search accepted {accepted}/{config.iterations} flips (C={classes}, D={dim})")

    prototypes = PackedBitMatrix.from_pm1(np.array(vectors, dtype=np.int8))
    return PrototypeFrame(prototypes, np.array(gram, dtype=np.int64), config.seed)


def logits(frame: PrototypeFrame, a_last: BitVector) -> IntVector:
    """``y_hat = P a_L``: one inner product per class prototype."""
    if a_last.length != frame.dim:
        raise DimensionError(f"activation width {a_last.length} != frame dimension {frame.dim}")
    return matvec_pm1(frame.prototypes, a_last)


def batch_logits(frame: PrototypeFrame, activations: PackedBitMatrix) -> np.ndarray:
    """Logits for every row of a batch."""
    if activations.cols != frame.dim:
        raise DimensionError(f"activation width {activations.cols} != frame dimension {frame.dim}")
    return matmul_pm1(frame.prototypes, activations)


def self_test(frame: PrototypeFrame) -> bool:
    """True when every prototype is classified as its own class."""
    scores = batch_logits(frame, frame.prototypes)
    return bool(np.array_equal(scores.argmax(axis=1), np.arange(frame.classes)))


def frame_to_bytes(frame: PrototypeFrame) -> bytes:
    header = _FRAME_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, frame.classes, frame.dim, frame.seed)
    return header + frame.prototypes.data.astype("<u8").tobytes()


def frame_from_bytes(blob: bytes) -> PrototypeFrame:
    if len(blob) < _FRAME_HEADER.size:
        raise DataError(f"frame file truncated: {len(blob)} bytes")

    magic, version, classes, dim, seed = _FRAME_HEADER.unpack_from(blob)
    if magic != FRAME_MAGIC:
        raise DataError(f"not a frame file (magic {magic!r})")
    if version != FRAME_VERSION:
        raise DataError(f"unsupported frame version {version}")

    words = (dim + 63) // 64
    body = blob[_FRAME_HEADER.size:]
    if len(body) != classes * words * 8:
        raise DataError(f"frame body has {len(body)} bytes, expected {classes * words * 8}")

    data = np.frombuffer(body, dtype="<u8").astype(np.uint64).reshape(classes, words)
    try:
        return PrototypeFrame.from_prototypes(PackedBitMatrix(classes, dim, data), seed)
    except ValueError as e:
        raise DataError(f"corrupt frame body: {e}") from e


def save_frame(path: str | Path, frame: PrototypeFrame) -> Path:
    """Write the frame as a 16-byte header followed by packed prototype rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(frame_to_bytes(frame))
    logger.info(f"Saved {frame.classes}x{frame.dim} frame to: {path}")
    return path


def load_frame(path: str | Path) -> PrototypeFrame:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read frame file {path}: {e}") from e
    return frame_from_bytes(blob)
