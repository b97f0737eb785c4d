"""Tests for error propagation through time in the recurrent classifier."""

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from binprop.bep import Layer, Network, TrainState, build_masks, reinforce, reinforce_joined, train_epoch
from binprop.beptt import (
    RnnModel,
    rnn_apply_updates,
    rnn_build_masks,
    rnn_desired_states,
    rnn_forward,
    rnn_predict,
    rnn_train_epoch,
)
from binprop.bitcore import BitVector, PackedBitMatrix
from binprop.data import EncodedDataset
from binprop.errors import DimensionError
from binprop.frames import search_frame
from binprop.oracle import naive_rnn_forward, naive_temporal_update
from binprop.types import FrameSearchConfig, Hyperparams

INPUT, STATE, OUTPUT, CLASSES = 8, 6, 10, 3


def random_pm1(rng, *shape):
    return rng.integers(0, 2, size=shape).astype(np.int8) * 2 - 1


def small_model(seed=0, **hyper):
    rng = np.random.default_rng(seed)
    frame = search_frame(FrameSearchConfig(CLASSES, OUTPUT, iterations=300, seed=seed))
    params = dict(gamma0=2, epochs=1)
    params.update(hyper)
    return RnnModel.build(INPUT, STATE, OUTPUT, frame, Hyperparams(**params), rng)


def random_sequence(rng, steps, rows=None):
    if rows is None:
        return [BitVector.from_pm1(random_pm1(rng, INPUT)) for _ in range(steps)]
    return [PackedBitMatrix.from_pm1(random_pm1(rng, rows, INPUT)) for _ in range(steps)]


class TestRnnForward:
    """Recurrence against the element-wise reference."""

    def test_matches_naive_recurrence(self):
        """States, read-out and logits agree with the naive pass."""
        rng = np.random.default_rng(1)
        model = small_model(seed=1)
        for steps in (1, 2, 5):
            sequence = random_sequence(rng, steps)
            trace = rnn_forward(model, sequence)
            ref = naive_rnn_forward(
                model.xs.H, model.ss.H, model.sy.H, model.frame.prototypes.to_pm1(),
                [a.to_pm1() for a in sequence],
            )
            assert trace.steps == steps
            for t in range(steps):
                assert trace.pre[t][0].tolist() == ref.pre[t]
                assert trace.states[t].to_pm1()[0].tolist() == ref.states[t]
            assert trace.z_y[0].tolist() == ref.z_y
            assert trace.logits[0].tolist() == ref.logits

    def test_all_positive_fixed_point(self):
        """All-+1 weights and inputs keep every state at +1."""
        model = small_model()
        model = RnnModel(
            Layer(np.ones((STATE, INPUT)), 16), Layer(np.ones((STATE, STATE)), 16),
            model.sy, model.frame, model.hyper,
        )
        trace = rnn_forward(model, [BitVector.ones(INPUT)] * 4)
        for s in trace.states:
            assert s.to_pm1().tolist() == [[1] * STATE]

    def test_initial_state_is_all_ones(self):
        """s_0 is the all-+1 vector for every row."""
        model = small_model()
        trace = rnn_forward(model, random_sequence(np.random.default_rng(2), 2, rows=3))
        assert trace.previous_state(0).to_pm1().tolist() == [[1] * STATE] * 3
        assert trace.previous_state(1) == trace.states[0]

    def test_single_step_is_a_two_layer_pass(self):
        """With T=1 the state is sign([W_xs | W_ss] [a_1; s_0])."""
        rng = np.random.default_rng(3)
        model = small_model(seed=3)
        a = random_pm1(rng, INPUT)
        trace = rnn_forward(model, [BitVector.from_pm1(a)])
        W = np.hstack([model.xs.W.to_pm1(), model.ss.W.to_pm1()]).astype(int)
        z = W @ np.concatenate([a, np.ones(STATE, dtype=int)])
        assert trace.pre[0][0].tolist() == z.tolist()

    def test_batch_predict_matches_rows(self):
        """rnn_predict on a batch equals per-row passes."""
        rng = np.random.default_rng(4)
        model = small_model(seed=4)
        frames = random_sequence(rng, 3, rows=5)
        logits = rnn_predict(model, frames)
        for n in range(5):
            single = rnn_forward(model, [f.row(n) for f in frames])
            assert np.array_equal(single.logits[0], logits[n])

    def test_shape_checks(self):
        """Empty sequences, wrong widths and ragged batches are refused."""
        model = small_model()
        rng = np.random.default_rng(5)
        with pytest.raises(DimensionError):
            rnn_forward(model, [])
        with pytest.raises(DimensionError):
            rnn_forward(model, [BitVector.ones(INPUT + 1)])
        with pytest.raises(DimensionError):
            rnn_forward(model, [PackedBitMatrix.from_pm1(random_pm1(rng, 2, INPUT)),
                                PackedBitMatrix.from_pm1(random_pm1(rng, 3, INPUT))])

    def test_model_dimension_checks(self):
        """The state matrix must be square and match the other matrices."""
        model = small_model()
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionError):
            RnnModel(model.xs, Layer.random(STATE, STATE + 1, 16, rng), model.sy, model.frame, model.hyper)


class TestRnnTargets:
    """Targets through the read-out and the recurrence."""

    def test_single_step_produces_one_state_target(self):
        """T=1 yields s*_y and s*_1 only."""
        rng = np.random.default_rng(6)
        model = small_model(seed=6)
        trace = rnn_forward(model, random_sequence(rng, 1, rows=2))
        targets = rnn_desired_states(model, trace, [0, 2])
        assert list(targets.steps()) == [0]
        assert targets.output == model.frame.prototypes.select([0, 2])

    def test_horizon_truncates_to_recent_steps(self):
        """Only the last `horizon` steps receive targets; the last one is shared."""
        rng = np.random.default_rng(7)
        model = small_model(seed=7)
        trace = rnn_forward(model, random_sequence(rng, 5, rows=3))
        full = rnn_desired_states(model, trace, [0, 1, 2])
        short = rnn_desired_states(model, trace, [0, 1, 2], horizon=2)
        assert list(full.steps()) == [0, 1, 2, 3, 4]
        assert list(short.steps()) == [3, 4]
        assert short.state(4) == full.state(4)
        assert short.state(3) == full.state(3)

    def test_hyperparameter_horizon(self):
        """The model's horizon applies when none is passed."""
        rng = np.random.default_rng(8)
        model = small_model(seed=8, horizon=3)
        trace = rnn_forward(model, random_sequence(rng, 6, rows=2))
        assert list(rnn_desired_states(model, trace, [1, 1]).steps()) == [3, 4, 5]

    def test_label_count_checked(self):
        """Labels must match the traced rows."""
        model = small_model()
        trace = rnn_forward(model, random_sequence(np.random.default_rng(0), 2, rows=2))
        with pytest.raises(DimensionError):
            rnn_desired_states(model, trace, [0])


class TestRnnMasksAndUpdates:
    """Time-shared masks and tied updates."""

    def test_single_step_mask_equals_feedforward_mask(self):
        """With T=1 the state mask is the feedforward build_masks result."""
        rng = np.random.default_rng(9)
        model = small_model(seed=9)
        for _ in range(20):
            trace = rnn_forward(model, random_sequence(rng, 1, rows=4))
            targets = rnn_desired_states(model, trace, rng.integers(0, CLASSES, size=4))
            masks = rnn_build_masks(model, trace, targets, [2, 5])
            expected = build_masks(targets.state(0), trace.states[0], trace.pre[0], 2)
            assert np.array_equal(masks.state, expected)
            assert np.array_equal(masks.output, build_masks(targets.output, trace.s_y, trace.z_y, 5))

    def test_masking_commutes_with_temporal_sum(self):
        """The tied update equals the mask applied after summing every step's outer products."""
        rng = np.random.default_rng(10)
        for _ in range(30):
            model = small_model(seed=int(rng.integers(0, 1000)))
            steps = int(rng.integers(1, 6))
            trace = rnn_forward(model, random_sequence(rng, steps, rows=1))
            label = [int(rng.integers(0, CLASSES))]
            targets = rnn_desired_states(model, trace, label)
            masks = rnn_build_masks(model, trace, targets, [2, 2])

            xs_before, ss_before = model.xs.H.copy(), model.ss.H.copy()
            rnn_apply_updates(model, trace, targets, masks)

            s_star = [targets.state(t).to_pm1()[0] for t in targets.steps()]
            inputs = [trace.inputs[t].to_pm1()[0] for t in targets.steps()]
            previous = [trace.previous_state(t).to_pm1()[0] for t in targets.steps()]
            assert (model.xs.H - xs_before).tolist() == [
                [2 * v for v in row] for row in naive_temporal_update(s_star, inputs, masks.state[0])
            ]
            assert (model.ss.H - ss_before).tolist() == [
                [2 * v for v in row] for row in naive_temporal_update(s_star, previous, masks.state[0])
            ]

    def test_output_step_coefficient(self):
        """H_sy moves by sy_step times the masked outer product."""
        rng = np.random.default_rng(11)
        for step in (1, 2):
            model = small_model(seed=11, sy_step=step)
            trace = rnn_forward(model, random_sequence(rng, 3, rows=1))
            targets = rnn_desired_states(model, trace, [1])
            masks = rnn_build_masks(model, trace, targets, [2, 2])
            before = model.sy.H.copy()
            rnn_apply_updates(model, trace, targets, masks)
            outer = np.outer(targets.output.to_pm1()[0], trace.states[-1].to_pm1()[0])
            expected = step * np.where(masks.output[0][:, None], outer, 0)
            assert np.array_equal(model.sy.H - before, expected)

    def test_output_parity_follows_step(self):
        """H_sy starts even for a unit step and odd for a step of two."""
        assert np.all(small_model(sy_step=1).sy.H % 2 == 0)
        assert np.all(small_model(sy_step=2).sy.H % 2 == 1)


class TestRnnTraining:
    """Epoch loop and its feedforward reduction."""

    @staticmethod
    def single_step_pair(p_r, nu, sy_step, samples=60):
        """A T=1 model, the two-layer network on [a_1; s_0] with H = [H_xs | H_ss], and their data."""
        rng = np.random.default_rng(12)
        model = small_model(seed=12, p_r=p_r, nu=nu, sy_step=sy_step, gamma0=2)
        hyper = model.hyper
        net = Network(
            [Layer(np.hstack([model.xs.H, model.ss.H]), hyper.weight_bits), Layer(model.sy.H, hyper.weight_bits)],
            model.frame, hyper,
        )

        x = random_pm1(rng, samples, INPUT)
        labels = rng.integers(0, CLASSES, size=samples)
        sequences = EncodedDataset((PackedBitMatrix.from_pm1(x),), labels, CLASSES)
        joined = EncodedDataset(
            (PackedBitMatrix.from_pm1(np.hstack([x, np.ones((samples, STATE), dtype=np.int8)])),), labels, CLASSES
        )
        return model, net, sequences, joined

    @pytest.mark.parametrize("p_r", [0.0, 0.5, 1.0])
    @pytest.mark.parametrize("nu", [0.05, 0.5])
    def test_single_step_trajectory_matches_feedforward(self, p_r, nu):
        """With an output step of two, T=1 training equals the feedforward network bit for bit."""
        model, net, sequences, joined = self.single_step_pair(p_r, nu, sy_step=2)
        rnn_state = TrainState.start([STATE, OUTPUT], model.hyper, seed=3)
        ff_state = TrainState.start([STATE, OUTPUT], model.hyper, seed=3)
        reinforced = 0
        for _ in range(4):
            rnn_metrics = rnn_train_epoch(model, sequences, rnn_state)
            ff_metrics = train_epoch(net, joined, ff_state)
            assert rnn_metrics.train_error == ff_metrics.train_error
            assert rnn_metrics.triggered == ff_metrics.triggered
            assert rnn_metrics.reinforced == ff_metrics.reinforced
            assert rnn_metrics.saturations == ff_metrics.saturations
            assert np.array_equal(net.layers[0].H, np.hstack([model.xs.H, model.ss.H]))
            assert np.array_equal(net.layers[1].H, model.sy.H)
            reinforced += rnn_metrics.reinforced
        if p_r > 0:
            assert reinforced > 0

    def test_unit_output_step_departs_from_feedforward(self):
        """The reduction needs an output step of two; a unit step moves H_sy by half as much."""
        model, net, sequences, joined = self.single_step_pair(0.0, 0.05, sy_step=1)
        before = model.sy.H.copy()
        rnn_metrics = rnn_train_epoch(model, sequences, TrainState.start([STATE, OUTPUT], model.hyper, seed=3))
        train_epoch(net, joined, TrainState.start([STATE, OUTPUT], model.hyper, seed=3))

        assert rnn_metrics.updates[1] > 0
        assert not np.array_equal(model.sy.H, before)
        assert not np.array_equal(net.layers[1].H, model.sy.H)

    def test_state_matrices_share_one_stream(self):
        """H_xs and H_ss are reinforced by one draw, as the joined matrix would be."""
        model = small_model(seed=5)
        joined = Layer(np.hstack([model.xs.H, model.ss.H]), model.hyper.weight_bits)
        counted = reinforce_joined([model.xs, model.ss], 1.0, 1.0, np.random.default_rng(9))
        assert counted == reinforce(joined, 1.0, 1.0, np.random.default_rng(9))
        assert np.array_equal(joined.H, np.hstack([model.xs.H, model.ss.H]))
        (xs, ss), (sy,) = model.reinforcement_groups
        assert xs is model.xs and ss is model.ss and sy is model.sy
        with pytest.raises(DimensionError):
            reinforce_joined([model.xs, model.sy], 1.0, 1.0, np.random.default_rng(9))

    def test_epoch_keeps_invariants(self):
        """Training with reinforcement keeps sign caches and ranges intact."""
        rng = np.random.default_rng(13)
        model = small_model(seed=13, p_r=1.0)
        frames = tuple(PackedBitMatrix.from_pm1(random_pm1(rng, 40, INPUT)) for _ in range(4))
        data = EncodedDataset(frames, rng.integers(0, CLASSES, size=40), CLASSES)
        state = TrainState.start([STATE, OUTPUT], model.hyper, seed=0)
        metrics = rnn_train_epoch(model, data, state)
        assert metrics.epoch == 1
        assert len(metrics.updates) == 2
        assert 0.0 <= metrics.train_error <= 1.0
        model.verify()

    def test_width_checked(self):
        """Frames of the wrong width are refused."""
        model = small_model()
        data = EncodedDataset((PackedBitMatrix.from_pm1(np.ones((3, INPUT + 1), dtype=int)),), [0, 1, 2], CLASSES)
        with pytest.raises(DimensionError):
            rnn_train_epoch(model, data, TrainState.start([STATE, OUTPUT], model.hyper, seed=0))
