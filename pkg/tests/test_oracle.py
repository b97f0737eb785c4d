"""Tests for the reference oracles themselves."""

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from binprop.oracle import (
    check_local_correctness,
    exhaustive_argmax_gated,
    gated_objective,
    is_maximizer,
    naive_dot,
    naive_gated_transpose,
    naive_matvec,
    naive_outer,
    naive_temporal_update,
    relaxation_integrality_check,
)


def random_pm1(rng, *shape):
    return rng.integers(0, 2, size=shape) * 2 - 1


class TestNaiveArithmetic:
    """Hand-checked small cases."""

    def test_products(self):
        """Dot, matvec, gated transpose and outer on tiny inputs."""
        W = [[1, -1, 1], [-1, -1, 1]]
        assert naive_dot([1, -1, 1], [1, 1, 1]) == 1
        assert naive_matvec(W, [1, 1, 1]) == [1, -1]
        assert naive_gated_transpose(W, [1, 0], [-1, 1]) == [-1, 1, -1]
        assert naive_outer([1, -1], [1, -1, 1]) == [[1, -1, 1], [-1, 1, -1]]

    def test_gated_objective(self):
        """Closed gates drop their rows from the objective."""
        W = [[1, 1], [1, -1]]
        assert gated_objective(W, [1, 1], [1, 1], [1, 1]) == 2
        assert gated_objective(W, [1, 0], [1, 1], [1, 1]) == 2
        assert gated_objective(W, [0, 1], [1, -1], [1, -1]) == -2

    def test_temporal_update_masks_rows(self):
        """Rows outside the mask stay zero after summing."""
        result = naive_temporal_update([[1, -1], [1, 1]], [[1, 1], [-1, 1]], [True, False])
        assert result == [[0, 2], [0, 0]]


class TestExhaustiveSearch:
    """Enumeration of the gated alignment maximizers."""

    def test_all_gates_closed(self):
        """g = 0 makes every vertex a maximizer."""
        best, maximizers = exhaustive_argmax_gated(np.ones((3, 4), dtype=int), [0, 0, 0], [1, 1, 1])
        assert best == 0
        assert maximizers.shape == (16, 4)
        assert len({tuple(m) for m in maximizers.tolist()}) == 16

    def test_unique_maximizer(self):
        """A single row with an open gate has the row itself as the only maximizer."""
        best, maximizers = exhaustive_argmax_gated([[1, -1, 1]], [1], [1])
        assert best == 3
        assert maximizers.tolist() == [[1, -1, 1]]
        assert is_maximizer([1, -1, 1], maximizers)
        assert not is_maximizer([1, 1, 1], maximizers)

    def test_best_value_matches_objective(self):
        """Every reported maximizer attains the reported best value."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            W = random_pm1(rng, 4, 6)
            g, b = rng.integers(0, 2, size=4), random_pm1(rng, 4)
            best, maximizers = exhaustive_argmax_gated(W, g, b)
            for m in maximizers:
                assert gated_objective(W, g, b, m) == best

    def test_enumeration_bound(self):
        """Too many columns are refused."""
        with pytest.raises(ValueError):
            exhaustive_argmax_gated(np.ones((1, 21), dtype=int), [1], [1])


class TestRelaxation:
    """The box relaxation never beats the best vertex."""

    def test_integrality_on_random_instances(self):
        """200 random instances across small and fallback grid sizes."""
        rng = np.random.default_rng(1)
        for i in range(200):
            k_a = int(rng.integers(1, 7))
            W = random_pm1(rng, int(rng.integers(1, 6)), k_a)
            g = rng.integers(0, 2, size=W.shape[0])
            b = random_pm1(rng, W.shape[0])
            assert relaxation_integrality_check(W, g, b)


class TestLocalCorrectness:
    """The single-row update check."""

    def test_hand_cases(self):
        """Fan-in 4 with u = -2: the update lands on 6 for a* = +1."""
        before = np.array([[1, -1, -1, -1]])
        after = np.array([[3, 1, 1, 1]])
        assert check_local_correctness(before, after, [1, 1, 1, 1], 1, 0, 127).ok

        after_negative = np.array([[-1, -3, -3, -3]])
        assert check_local_correctness(before, after_negative, [1, 1, 1, 1], -1, 0, 127).ok

    def test_saturated_row_refused(self):
        """A row at the bound makes the check inapplicable."""
        with pytest.raises(ValueError):
            check_local_correctness(np.array([[5]]), np.array([[7]]), [1], 1, 0, 7)
