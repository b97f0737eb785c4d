"""Binary error propagation through time for many-to-one recurrent classifiers.

The state recurrence ``s_t = sign(W_xs a_t + W_ss s_{t-1})`` runs from a fixed
all-+1 state; the last state is read out through ``W_sy`` and the prototype
frame. Targets travel backwards through ``W_sy`` and then ``W_ss`` one step
at a time, and the tied weights accumulate their updates over every step
with masks shared across time.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence

import numpy as np

from .bep import (
    Layer,
    TrainState,
    UpdateStats,
    build_masks,
    gate_limit,
    gate_rows,
    margin_threshold,
    reinforce_joined,
    resolve_batch_size,
    select_winners,
    triggered,
)
from .bitcore import BitVector, PackedBitMatrix, as_batch, gated_matmul_transpose, masked_outer_sum, matmul_pm1, sign_rows
from .data import EncodedDataset
from .errors import DimensionError
from .frames import PrototypeFrame, batch_logits
from .types import EpochMetrics, Hyperparams


logger = logging.getLogger(__name__)


@dataclass
class RnnModel:
    """Input-to-state, state-to-state and state-to-output layers plus the fixed frame."""
    xs: Layer
    ss: Layer
    sy: Layer
    frame: PrototypeFrame
    hyper: Hyperparams

    def __post_init__(self):
        """Check the matrix shapes against each other and the frame."""
        k_s = self.ss.fan_out
        if self.ss.fan_in != k_s:
            raise DimensionError(f"state-to-state weights must be square, got {self.ss.H.shape}")
        if self.xs.fan_out != k_s or self.sy.fan_in != k_s:
            raise DimensionError(
                f"state width {k_s} disagrees with H_xs {self.xs.H.shape} or H_sy {self.sy.H.shape}"
            )
        if self.frame.dim != self.sy.fan_out:
            raise DimensionError(f"frame dimension {self.frame.dim} != output width {self.sy.fan_out}")

    @classmethod
    def build(cls, input_width: int, state_width: int, output_width: int, frame: PrototypeFrame,
              hyper: Hyperparams, rng: np.random.Generator) -> "RnnModel":
        """Odd initial weights; H_sy starts even when its update step is 1."""
        xs = Layer.random(state_width, input_width, hyper.weight_bits, rng)
        ss = Layer.random(state_width, state_width, hyper.weight_bits, rng)
        sy = Layer.random(output_width, state_width, hyper.weight_bits, rng,
                          parity="even" if hyper.sy_step == 1 else "odd")
        return cls(xs, ss, sy, frame, hyper)

    @property
    def input_width(self) -> int:
        return self.xs.fan_in

    @property
    def state_width(self) -> int:
        return self.ss.fan_out

    @property
    def output_width(self) -> int:
        return self.sy.fan_out

    @property
    def layers(self) -> List[Layer]:
        return [self.xs, self.ss, self.sy]

    @property
    def reinforcement_groups(self) -> List[List[Layer]]:
        """``[H_xs | H_ss]`` share rows and one random stream; ``H_sy`` has its own."""
        return [[self.xs, self.ss], [self.sy]]

    @property
    def s0(self) -> BitVector:
        return BitVector.ones(self.state_width)

    @cached_property
    def margin_threshold(self) -> int:
        return margin_threshold(self.hyper.r, self.output_width)

    @cached_property
    def state_gate_limit(self) -> int:
        """Limit for the combined pre-activation, whose magnitude reaches K_s + K_x."""
        return gate_limit(self.hyper.nu, self.state_width + self.input_width)

    @cached_property
    def output_gate_limit(self) -> int:
        return gate_limit(self.hyper.nu, self.state_width)

    def verify(self):
        for layer in self.layers:
            layer.verify()
        self.frame.verify()


@dataclass
class RnnTrace:
    """Per-step pre-activations and states of a batch, plus the read-out."""
    inputs: List[PackedBitMatrix]
    initial: PackedBitMatrix
    pre: List[np.ndarray]
    states: List[PackedBitMatrix]
    z_y: np.ndarray
    s_y: PackedBitMatrix
    logits: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.inputs)

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)

    def previous_state(self, t: int) -> PackedBitMatrix:
        """``s_{t-1}`` for 0-based step ``t``."""
        return self.initial if t == 0 else self.states[t - 1]

    def select(self, indices) -> "RnnTrace":
        indices = np.asarray(indices, dtype=np.intp)
        return RnnTrace(
            [a.select(indices) for a in self.inputs],
            self.initial.select(indices),
            [z[indices] for z in self.pre],
            [s.select(indices) for s in self.states],
            self.z_y[indices],
            self.s_y.select(indices),
            self.logits[indices],
        )


def _initial_states(model: RnnModel, rows: int) -> PackedBitMatrix:
    s0 = model.s0
    return PackedBitMatrix(rows, s0.length, np.repeat(s0.words[None, :], rows, axis=0))


def rnn_forward(model: RnnModel, sequence: Sequence[BitVector | PackedBitMatrix]) -> RnnTrace:
    """Run the recurrence over ``a_1..a_T`` (single vectors or aligned batches)."""
    inputs = [as_batch(a) for a in sequence]
    if not inputs:
        raise DimensionError("a sequence needs at least one step")
    rows = inputs[0].rows
    for t, a in enumerate(inputs):
        if a.cols != model.input_width:
            raise DimensionError(f"step {t + 1} has width {a.cols}, model expects {model.input_width}")
        if a.rows != rows:
            raise DimensionError(f"step {t + 1} has {a.rows} rows, step 1 has {rows}")

    initial = _initial_states(model, rows)
    s = initial
    pre, states = [], []
    for a in inputs:
        z = matmul_pm1(model.xs.W, a) + matmul_pm1(model.ss.W, s)
        s = sign_rows(z)
        pre.append(z)
        states.append(s)

    z_y = matmul_pm1(model.sy.W, s)
    s_y = sign_rows(z_y)
    return RnnTrace(inputs, initial, pre, states, z_y, s_y, batch_logits(model.frame, s_y))


@dataclass
class RnnTargets:
    """``s*_y`` and the state targets for steps ``start .. T-1`` (0-based)."""
    output: PackedBitMatrix
    states: List[PackedBitMatrix]
    start: int

    def steps(self) -> range:
        return range(self.start, self.start + len(self.states))

    def state(self, t: int) -> PackedBitMatrix:
        return self.states[t - self.start]


def rnn_desired_states(model: RnnModel, trace: RnnTrace, labels, horizon: Optional[int] = None) -> RnnTargets:
    """Back-propagate the label prototype through ``W_sy`` and then ``W_ss``.

    Only the most recent ``horizon`` steps get a target (all steps by default,
    or ``model.hyper.horizon`` when set).
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if labels.size != trace.s_y.rows:
        raise DimensionError(f"{labels.size} labels for {trace.s_y.rows} traced samples")

    horizon = horizon or model.hyper.horizon or trace.steps
    start = max(0, trace.steps - horizon)

    s_star_y = model.frame.prototypes.select(labels)
    gates = gate_rows(trace.z_y, model.output_gate_limit)
    targets = [sign_rows(gated_matmul_transpose(model.sy.W, gates, s_star_y))]
    for t in range(trace.steps - 1, start, -1):
        gates = gate_rows(trace.pre[t], model.state_gate_limit)
        targets.append(sign_rows(gated_matmul_transpose(model.ss.W, gates, targets[-1])))
    return RnnTargets(s_star_y, targets[::-1], start)


@dataclass
class RnnMasks:
    state: np.ndarray
    output: np.ndarray


def rnn_build_masks(model: RnnModel, trace: RnnTrace, targets: RnnTargets, sizes: Sequence[int]) -> RnnMasks:
    """Masks for the state matrices (shared by every step) and the output matrix.

    A state neuron is wrong when it misses its target at any targeted step;
    its key sums ``s*_t * z_t`` over the steps where it was wrong.
    """
    state_size, output_size = sizes
    rows = trace.s_y.rows
    wrong = np.zeros((rows, model.state_width), dtype=bool)
    key = np.zeros((rows, model.state_width), dtype=np.int64)
    for t in targets.steps():
        wanted = targets.state(t)
        missed = wanted.to_bits() != trace.states[t].to_bits()
        wrong |= missed
        key += np.where(missed, wanted.to_pm1().astype(np.int64) * trace.pre[t], 0)

    return RnnMasks(
        state=select_winners(wrong, key, state_size),
        output=build_masks(targets.output, trace.s_y, trace.z_y, output_size),
    )


def rnn_apply_updates(model: RnnModel, trace: RnnTrace, targets: RnnTargets, masks: RnnMasks) -> UpdateStats:
    """Accumulate the tied updates over all targeted steps, then apply them.

    ``H_xs += 2 sum_t M * s*_t a_t^T``, ``H_ss += 2 sum_t M * s*_t s_{t-1}^T``
    and ``H_sy += sy_step * M_y * s*_y s_T^T``.
    """
    d_xs = np.zeros(model.xs.H.shape, dtype=np.int64)
    d_ss = np.zeros(model.ss.H.shape, dtype=np.int64)
    for t in targets.steps():
        wanted = targets.state(t)
        d_xs += masked_outer_sum(wanted, masks.state, trace.inputs[t])
        d_ss += masked_outer_sum(wanted, masks.state, trace.previous_state(t))
    d_sy = masked_outer_sum(targets.output, masks.output, trace.states[-1])

    saturations = model.xs.add(2 * d_xs) + model.ss.add(2 * d_ss) + model.sy.add(model.hyper.sy_step * d_sy)
    return UpdateStats([int(masks.state.sum()), int(masks.output.sum())], saturations)


def rnn_train_epoch(model: RnnModel, dataset: EncodedDataset, state: TrainState) -> EpochMetrics:
    """One shuffled mini-batch pass; mirrors the feedforward epoch."""
    hyper = model.hyper
    n = len(dataset)
    if dataset.width != model.input_width:
        raise DimensionError(f"frames of width {dataset.width} do not feed a model of input width {model.input_width}")

    batch = resolve_batch_size(hyper.batch_size, n)
    sizes = state.schedule.sizes
    order = state.shuffle_rng.permutation(n)

    errors = fired = saturations = reinforced = 0
    updates = [0, 0]
    for start in range(0, n, batch):
        index = order[start:start + batch]
        labels = dataset.labels[index]
        trace = rnn_forward(model, [frame.select(index) for frame in dataset.frames])
        errors += int(np.count_nonzero(trace.predictions != labels))

        hits = np.flatnonzero(triggered(trace.logits, labels, model.margin_threshold))
        if hits.size:
            sub = trace.select(hits)
            targets = rnn_desired_states(model, sub, labels[hits])
            masks = rnn_build_masks(model, sub, targets, sizes)
            stats = rnn_apply_updates(model, sub, targets, masks)
            updates = [u + s for u, s in zip(updates, stats.updates)]
            saturations += stats.saturations
            fired += int(hits.size)

        for group, rng in zip(model.reinforcement_groups, state.layer_rngs):
            count, saturated = reinforce_joined(group, hyper.p_r, state.error_rate, rng)
            reinforced += count
            saturations += saturated

        logger.debug(f"Batch at {start}: {hits.size}/{index.size} sequences triggered updates")

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


def rnn_predict(model: RnnModel, frames: Sequence[PackedBitMatrix]) -> np.ndarray:
    """Logits for a batch of encoded sequences."""
    return rnn_forward(model, frames).logits
