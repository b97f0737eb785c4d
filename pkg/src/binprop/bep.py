"""Binary error propagation for feedforward binary networks.

Forward passes, backward target propagation and weight updates run on
packed bits (XNOR/popcount) and integer counters only. The margin and gate
thresholds are turned into integer limits once per network so the training
path never compares against floats.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import List, Sequence

import numpy as np

from .bitcore import (
    BitVector,
    GateVector,
    IntVector,
    PackedBitMatrix,
    as_batch,
    gated_matmul_transpose,
    gated_matvec_transpose,
    masked_outer_sum,
    matmul_pm1,
    sign_rows,
    sign_to_bits,
)
from .config import INIT_MAGNITUDE
from .data import EncodedDataset
from .errors import ConfigError, DimensionError, InvariantError
from .frames import PrototypeFrame, batch_logits
from .types import EpochMetrics, Hyperparams


logger = logging.getLogger(__name__)


def exact(value: float) -> Fraction:
    """The decimal value as written, as an exact fraction (0.05 -> 1/20)."""
    return Fraction(str(value))


def margin_threshold(r: float, width: int) -> int:
    """Smallest integer margin that does NOT trigger an update: ceil(r * width)."""
    return math.ceil(exact(r) * width)


def gate_limit(nu: float, fan_in: int) -> int:
    """Largest |z| that passes the gate: floor(nu * fan_in)."""
    return math.floor(exact(nu) * fan_in)


@dataclass
class Layer:
    """Hidden integer weights ``H`` and their visible signs ``W``."""
    H: np.ndarray
    weight_bits: int
    W: PackedBitMatrix = field(init=False, repr=False)

    def __post_init__(self):
        """Copy ``H``, check its range and build the sign cache."""
        self.H = np.array(self.H, dtype=np.int64)
        if self.H.ndim != 2:
            raise ValueError("hidden weights must be a matrix")
        if np.any(np.abs(self.H) > self.bound):
            raise ValueError(f"hidden weights exceed +/-{self.bound}")
        self.refresh()

    @classmethod
    def random(cls, fan_out: int, fan_in: int, weight_bits: int, rng: np.random.Generator,
               parity: str = "odd") -> "Layer":
        """Uniform odd values in [-7, 7], or nonzero even values in [-6, 6]."""
        if parity == "odd":
            h = rng.integers(-(INIT_MAGNITUDE + 1) // 2, (INIT_MAGNITUDE + 1) // 2,
                             size=(fan_out, fan_in)) * 2 + 1
        else:
            magnitude = rng.integers(1, INIT_MAGNITUDE // 2 + 1, size=(fan_out, fan_in)) * 2
            h = np.where(rng.integers(0, 2, size=(fan_out, fan_in)) == 1, magnitude, -magnitude)
        return cls(h, weight_bits)

    @property
    def bound(self) -> int:
        """Symmetric saturation bound; odd, so clamping keeps odd entries odd."""
        return 2 ** (self.weight_bits - 1) - 1

    @property
    def fan_in(self) -> int:
        return self.H.shape[1]

    @property
    def fan_out(self) -> int:
        return self.H.shape[0]

    def refresh(self):
        self.W = PackedBitMatrix.from_bits(self.H >= 0)

    def add(self, delta: np.ndarray) -> int:
        """Saturating ``H += delta``; returns how many entries hit the bound."""
        raw = self.H + delta
        saturated = int(np.count_nonzero(np.abs(raw) > self.bound))
        self.H = np.clip(raw, -self.bound, self.bound)
        self.refresh()
        return saturated

    def verify(self):
        """Raise InvariantError on a stale sign cache or an out-of-range entry."""
        if np.any(np.abs(self.H) > self.bound):
            raise InvariantError("hidden weight outside the saturation range")
        if self.W != PackedBitMatrix.from_bits(self.H >= 0):
            raise InvariantError("visible weights differ from sign(H)")


@dataclass
class Network:
    """Trainable binary backbone followed by the fixed prototype classifier."""
    layers: List[Layer]
    frame: PrototypeFrame
    hyper: Hyperparams

    def __post_init__(self):
        """Check that layer dimensions chain into the frame."""
        if not self.layers:
            raise DimensionError("a network needs at least one layer")
        for l in range(1, len(self.layers)):
            if self.layers[l].fan_in != self.layers[l - 1].fan_out:
                raise DimensionError(
                    f"layer {l + 1} expects width {self.layers[l].fan_in}, layer {l} produces {self.layers[l - 1].fan_out}"
                )
        if self.frame.dim != self.layers[-1].fan_out:
            raise DimensionError(
                f"frame dimension {self.frame.dim} != last layer width {self.layers[-1].fan_out}"
            )

    @classmethod
    def build(cls, input_width: int, widths: Sequence[int], frame: PrototypeFrame,
              hyper: Hyperparams, rng: np.random.Generator) -> "Network":
        layers = []
        fan_in = input_width
        for width in widths:
            layers.append(Layer.random(width, fan_in, hyper.weight_bits, rng))
            fan_in = width
        return cls(layers, frame, hyper)

    @property
    def input_width(self) -> int:
        return self.layers[0].fan_in

    @property
    def widths(self) -> List[int]:
        return [layer.fan_out for layer in self.layers]

    @cached_property
    def margin_threshold(self) -> int:
        return margin_threshold(self.hyper.r, self.layers[-1].fan_out)

    @cached_property
    def gate_limits(self) -> List[int]:
        """Gate limit for the pre-activations of each layer, from that layer's fan-in."""
        return [gate_limit(self.hyper.nu, layer.fan_in) for layer in self.layers]

    def verify(self):
        for layer in self.layers:
            layer.verify()
        self.frame.verify()


@dataclass
class ForwardTrace:
    """Everything a batch forward pass leaves behind for the backward pass."""
    inputs: PackedBitMatrix
    pre: List[np.ndarray]
    activations: List[PackedBitMatrix]
    logits: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)

    def layer_input(self, l: int) -> PackedBitMatrix:
        """Input of layer ``l`` (0-based): a_0 for the first layer."""
        return self.inputs if l == 0 else self.activations[l - 1]

    def select(self, indices) -> "ForwardTrace":
        indices = np.asarray(indices, dtype=np.intp)
        return ForwardTrace(
            self.inputs.select(indices),
            [z[indices] for z in self.pre],
            [a.select(indices) for a in self.activations],
            self.logits[indices],
        )


def forward(net: Network, a0: BitVector | PackedBitMatrix) -> ForwardTrace:
    """``z_l = W_l a_{l-1}``, ``a_l = sign(z_l)``, ``y_hat = P a_L`` for a vector or a batch."""
    inputs = as_batch(a0)
    if inputs.cols != net.input_width:
        raise DimensionError(f"input width {inputs.cols} != network input width {net.input_width}")

    pre, activations = [], []
    a = inputs
    for layer in net.layers:
        z = matmul_pm1(layer.W, a)
        a = sign_rows(z)
        pre.append(z)
        activations.append(a)
    return ForwardTrace(inputs, pre, activations, batch_logits(net.frame, a))


def label_margins(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """``y_hat_c - max_{c' != c} y_hat_c'`` per row."""
    rows = np.arange(logits.shape[0])
    others = logits.copy()
    others[rows, labels] = np.iinfo(np.int64).min
    return logits[rows, labels] - others.max(axis=1)


def should_update(yhat: IntVector, c: int, r: float, width: int) -> bool:
    """True when the label's logit leads the runner-up by less than ``r * width``."""
    yhat = np.asarray(yhat)
    if yhat.size < 2:
        raise ValueError("the update trigger needs at least two classes")
    if not 0 <= c < yhat.size:
        raise ValueError(f"class {c} out of range for {yhat.size} logits")
    margin = label_margins(yhat[None, :], np.array([c]))[0]
    return bool(margin < margin_threshold(r, width))


def triggered(logits: np.ndarray, labels: np.ndarray, threshold: int) -> np.ndarray:
    """Boolean mask of the rows whose margin is below ``threshold``."""
    return label_margins(logits, labels) < threshold


def compute_gate(z: IntVector, nu: float, fan_in: int) -> GateVector:
    """Pass neuron i iff ``|z_i| <= nu * fan_in``."""
    return GateVector.from_mask(np.abs(np.asarray(z)) <= gate_limit(nu, fan_in))


def gate_rows(z: np.ndarray, limit: int) -> PackedBitMatrix:
    """Batched gates against a precomputed integer limit."""
    return PackedBitMatrix.from_bits(np.abs(z) <= limit)


def backproject(w_next: PackedBitMatrix, gate: GateVector, a_star_next: BitVector) -> BitVector:
    """``sign(W^T (g * a*))``: the maximizer of the gated alignment with ``a*``."""
    return sign_to_bits(gated_matvec_transpose(w_next, gate, a_star_next))


def desired_activations(net: Network, trace: ForwardTrace, labels) -> List[PackedBitMatrix]:
    """Targets ``a*_1 .. a*_L`` for every row of ``trace``.

    ``a*_L`` is the label's prototype; each earlier target back-projects the
    next one through that layer's weights, gated by its stored pre-activations.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if labels.size != trace.inputs.rows:
        raise DimensionError(f"{labels.size} labels for {trace.inputs.rows} traced samples")

    targets = [net.frame.prototypes.select(labels)]
    for l in range(len(net.layers) - 1, 0, -1):
        gates = gate_rows(trace.pre[l], net.gate_limits[l])
        targets.append(sign_rows(gated_matmul_transpose(net.layers[l].W, gates, targets[-1])))
    return targets[::-1]


def select_winners(wrong: np.ndarray, key: np.ndarray, group_size: int) -> np.ndarray:
    """Per contiguous group, the wrong neuron with the smallest key (lowest index on ties)."""
    n, width = wrong.shape
    if group_size < 1 or width % group_size:
        raise ConfigError(f"group size {group_size} does not divide layer width {width}")

    groups = width // group_size
    wrong = wrong.reshape(n, groups, group_size)
    keyed = np.where(wrong, key.reshape(n, groups, group_size), np.iinfo(np.int64).max)
    best = keyed.argmin(axis=2)

    mask = np.zeros((n, groups, group_size), dtype=bool)
    rows, cols = np.nonzero(wrong.any(axis=2))
    mask[rows, cols, best[rows, cols]] = True
    return mask.reshape(n, width)


def build_masks(targets: PackedBitMatrix, activations: PackedBitMatrix, pre: np.ndarray,
                group_size: int) -> np.ndarray:
    """Row-wise winner-takes-update masks for a batch (True = update this neuron)."""
    wanted = targets.to_pm1().astype(np.int64)
    wrong = targets.to_bits() != activations.to_bits()
    return select_winners(wrong, wanted * pre, group_size)


def build_mask(layer: Layer, a_star: BitVector, a: BitVector, z: IntVector, group_size: int) -> np.ndarray:
    """Single-sample ``build_masks``; returns a boolean row selector of length K_l."""
    if not (a_star.length == a.length == len(z) == layer.fan_out):
        raise DimensionError("mask operands must match the layer width")
    return build_masks(as_batch(a_star), as_batch(a), np.asarray(z)[None, :], group_size)[0]


@dataclass
class UpdateStats:
    updates: List[int]
    saturations: int


def apply_updates(net: Network, trace: ForwardTrace, targets: List[PackedBitMatrix],
                  masks: List[np.ndarray]) -> UpdateStats:
    """``H_l += 2 * sum_mu M^mu * (a*^mu a_{l-1}^mu^T)`` for every layer.

    All deltas come from the traced (pre-update) activations and are applied
    only after every layer's delta is known.
    """
    deltas = [
        masked_outer_sum(targets[l], masks[l], trace.layer_input(l))
        for l in range(len(net.layers))
    ]
    saturations = 0
    for layer, delta in zip(net.layers, deltas):
        saturations += layer.add(2 * delta)
    return UpdateStats([int(m.sum()) for m in masks], saturations)


def reinforcement_probability(p_r: float, error_rate: float, width: int) -> float:
    return p_r * math.sqrt(error_rate) * math.sqrt(2.0 / (math.pi * width))


def reinforce(layer: Layer, p_r: float, error_rate: float, rng: np.random.Generator) -> tuple[int, int]:
    """Push each hidden weight away from zero by 2 with a width-scaled probability.

    Returns (entries reinforced, entries saturated).
    """
    return reinforce_joined([layer], p_r, error_rate, rng)


def reinforce_joined(layers: Sequence[Layer], p_r: float, error_rate: float,
                     rng: np.random.Generator) -> tuple[int, int]:
    """``reinforce`` on matrices sharing their rows, drawn as one matrix ``[H_1 | H_2 | ...]``.

    One draw over the joined shape, split by columns, so the result equals
    reinforcing the concatenated matrix with the same stream.
    """
    if not (0 <= p_r <= 1 and 0 <= error_rate <= 1):
        raise ValueError("p_r and error_rate must lie in [0, 1]")
    fan_out = layers[0].fan_out
    if any(layer.fan_out != fan_out for layer in layers):
        raise DimensionError("jointly reinforced matrices must have the same number of rows")

    p = reinforcement_probability(p_r, error_rate, fan_out)
    if p <= 0:
        return 0, 0

    hits = rng.random((fan_out, sum(layer.fan_in for layer in layers))) < p
    saturated, offset = 0, 0
    for layer in layers:
        part = hits[:, offset:offset + layer.fan_in]
        offset += layer.fan_in
        saturated += layer.add(np.where(part, np.where(layer.H >= 0, 2, -2), 0))
    return int(hits.sum()), saturated


def divisors(n: int) -> List[int]:
    """Ascending positive divisors of ``n``."""
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


@dataclass
class GroupSchedule:
    """Per-layer group size walking up the divisor list when accuracy stalls."""
    divisors: List[List[int]]
    index: List[int]
    patience: int
    watermark: float = -1.0
    since_improvement: int = 0

    @classmethod
    def start(cls, widths: Sequence[int], sizes: Sequence[int], patience: int) -> "GroupSchedule":
        lists = [divisors(w) for w in widths]
        for size, options, width in zip(sizes, lists, widths):
            if size not in options:
                raise ConfigError(f"group size {size} does not divide layer width {width}")
        return cls(lists, [options.index(s) for s, options in zip(sizes, lists)], patience)

    @property
    def sizes(self) -> List[int]:
        return [options[i] for options, i in zip(self.divisors, self.index)]

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "patience": self.patience,
            "watermark": self.watermark,
            "since_improvement": self.since_improvement,
        }

    @classmethod
    def from_dict(cls, widths: Sequence[int], state: dict) -> "GroupSchedule":
        schedule = cls.start(widths, state["sizes"], state["patience"])
        schedule.watermark = state["watermark"]
        schedule.since_improvement = state["since_improvement"]
        return schedule


def schedule_step(schedule: GroupSchedule, accuracy: float) -> bool:
    """Record one epoch's accuracy; returns True when group sizes advanced."""
    if accuracy > schedule.watermark:
        schedule.watermark = accuracy
        schedule.since_improvement = 0
        return False

    schedule.since_improvement += 1
    if schedule.since_improvement < schedule.patience:
        return False

    schedule.since_improvement = 0
    before = schedule.sizes
    schedule.index = [min(i + 1, len(options) - 1) for options, i in zip(schedule.divisors, schedule.index)]
    if schedule.sizes == before:
        logger.warning(f"Accuracy stalled at the largest group sizes {before}")
        return False
    logger.info(f"Accuracy stalled; group sizes {before} -> {schedule.sizes}")
    return True


@dataclass
class TrainState:
    """Mutable training progress: schedule, error rate and random streams."""
    schedule: GroupSchedule
    shuffle_rng: np.random.Generator
    layer_rngs: List[np.random.Generator]
    epoch: int = 0
    error_rate: float = 1.0

    @classmethod
    def start(cls, widths: Sequence[int], hyper: Hyperparams, seed: int) -> "TrainState":
        """Fresh state; one reinforcement stream per trained width."""
        streams = np.random.SeedSequence(seed).spawn(len(widths) + 1)
        return cls(
            schedule=GroupSchedule.start(widths, hyper.group_sizes(list(widths)), hyper.stagnation_patience),
            shuffle_rng=np.random.default_rng(streams[0]),
            layer_rngs=[np.random.default_rng(s) for s in streams[1:]],
        )

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "error_rate": self.error_rate,
            "schedule": self.schedule.to_dict(),
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "layer_rngs": [rng.bit_generator.state for rng in self.layer_rngs],
        }

    @classmethod
    def from_dict(cls, widths: Sequence[int], state: dict) -> "TrainState":
        def restore(saved):
            rng = np.random.default_rng()
            rng.bit_generator.state = saved
            return rng

        return cls(
            schedule=GroupSchedule.from_dict(widths, state["schedule"]),
            shuffle_rng=restore(state["shuffle_rng"]),
            layer_rngs=[restore(s) for s in state["layer_rngs"]],
            epoch=state["epoch"],
            error_rate=state["error_rate"],
        )


def resolve_batch_size(batch_size: int | None, n: int) -> int:
    """Explicit size, or N // 10 with a floor of 1."""
    return batch_size if batch_size is not None else max(1, n // 10)


def train_epoch(net: Network, dataset: EncodedDataset, state: TrainState) -> EpochMetrics:
    """One pass over ``dataset`` in seeded shuffled mini-batches."""
    hyper = net.hyper
    n = len(dataset)
    if dataset.steps != 1 or dataset.width != net.input_width:
        raise DimensionError(
            f"dataset of {dataset.steps} x {dataset.width} does not feed a network of input width {net.input_width}"
        )

    batch = resolve_batch_size(hyper.batch_size, n)
    sizes = state.schedule.sizes
    order = state.shuffle_rng.permutation(n)
    inputs = dataset.frames[0]

    errors = fired = saturations = reinforced = 0
    updates = [0] * len(net.layers)
    for start in range(0, n, batch):
        index = order[start:start + batch]
        labels = dataset.labels[index]
        trace = forward(net, inputs.select(index))
        errors += int(np.count_nonzero(trace.predictions != labels))

        hits = np.flatnonzero(triggered(trace.logits, labels, net.margin_threshold))
        if hits.size:
            sub = trace.select(hits)
            targets = desired_activations(net, sub, labels[hits])
            masks = [
                build_masks(targets[l], sub.activations[l], sub.pre[l], sizes[l])
                for l in range(len(net.layers))
            ]
            stats = apply_updates(net, sub, targets, masks)
            updates = [u + s for u, s in zip(updates, stats.updates)]
            saturations += stats.saturations
            fired += int(hits.size)

        for layer, rng in zip(net.layers, state.layer_rngs):
            count, saturated = reinforce(layer, hyper.p_r, state.error_rate, rng)
            reinforced += count
            saturations += saturated

        logger.debug(f"Batch at {start}: {hits.size}/{index.size} samples triggered updates")

    if saturations:
        logger.warning(f"Epoch {state.epoch + 1}: {saturations} hidden weight updates saturated")

    state.error_rate = errors / n if n else 0.0
    state.epoch += 1
    return EpochMetrics(
        epoch=state.epoch,
        train_error=state.error_rate,
        triggered=fired,
        updates=updates,
        saturations=saturations,
        reinforced=reinforced,
        group_sizes=list(sizes),
    )


def predict(net: Network, inputs: PackedBitMatrix) -> np.ndarray:
    """Logits for a batch of encoded inputs."""
    return forward(net, inputs).logits
