"""Tests for packed +/-1 vectors, matrices and popcount kernels."""

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from binprop.bitcore import (
    BitVector,
    GateVector,
    PackedBitMatrix,
    dot_pm1,
    gated_matmul_transpose,
    gated_matvec_transpose,
    masked_outer_sum,
    matmul_pm1,
    matvec_pm1,
    outer_pm1,
    sign_to_bits,
)
from binprop.errors import DimensionError
from binprop.oracle import naive_dot, naive_gated_transpose, naive_matvec, naive_outer

SIZES = [1, 2, 3, 4, 5, 6, 7, 8, 63, 64, 65, 127, 128, 129, 300]
INSTANCES = 1000


def random_pm1(rng, *shape):
    return rng.integers(0, 2, size=shape).astype(np.int8) * 2 - 1


class TestBitVector:
    """Packing, decoding and structural invariants."""

    def test_round_trip_preserves_values(self):
        """Packing then unpacking returns the original +/-1 values."""
        rng = np.random.default_rng(0)
        for n in SIZES:
            values = random_pm1(rng, n)
            assert np.array_equal(BitVector.from_pm1(values).to_pm1(), values)

    def test_pad_bits_are_zero(self):
        """Bits past the logical length stay clear, including after negation."""
        v = BitVector.ones(65)
        assert v.words.shape == (2,)
        assert int(v.words[1]) == 1
        assert int(v.negate().words[1]) == 0

    def test_dirty_pad_bits_rejected(self):
        """A word with a set bit past the length is refused."""
        with pytest.raises(ValueError):
            BitVector(3, np.array([0b1000], dtype=np.uint64))

    def test_rejects_values_outside_pm1(self):
        """Zero is not a valid binary entry."""
        with pytest.raises(ValueError):
            BitVector.from_pm1([1, 0, -1])

    def test_words_are_read_only_copies(self):
        """The caller's array is not frozen and later edits do not leak in."""
        words = np.array([0b101], dtype=np.uint64)
        v = BitVector(3, words)
        words[0] = 0
        assert words.flags.writeable
        assert v.to_pm1().tolist() == [1, -1, 1]
        with pytest.raises(ValueError):
            v.words[0] = 0

    def test_bit_order_is_little_endian(self):
        """Element i lives in bit i of the first word."""
        v = BitVector.from_bits([True, False, False, True])
        assert int(v.words[0]) == 0b1001

    def test_gate_count(self):
        """A gate counts its passing positions."""
        gate = GateVector.from_mask([True, False, True, True])
        assert gate.count() == 3
        assert gate.passes().tolist() == [True, False, True, True]

    def test_sign_ties_go_positive(self):
        """Zero pre-activations map to +1."""
        assert sign_to_bits([0, -1, 2]).to_pm1().tolist() == [1, -1, 1]


class TestKernelsAgainstOracle:
    """Packed kernels match plain integer loops on random instances."""

    def setup_method(self):
        """Seed a generator per test."""
        self.rng = np.random.default_rng(1234)

    def test_dot_matches_oracle(self):
        """dot_pm1 equals the naive sum of products."""
        for i in range(INSTANCES):
            n = SIZES[i % len(SIZES)]
            a, b = random_pm1(self.rng, n), random_pm1(self.rng, n)
            assert dot_pm1(BitVector.from_pm1(a), BitVector.from_pm1(b)) == naive_dot(a, b)

    def test_matvec_matches_oracle(self):
        """matvec_pm1 equals the naive row-by-row product."""
        for i in range(INSTANCES):
            cols = SIZES[i % len(SIZES)]
            rows = int(self.rng.integers(1, 9))
            W, a = random_pm1(self.rng, rows, cols), random_pm1(self.rng, cols)
            z = matvec_pm1(PackedBitMatrix.from_pm1(W), BitVector.from_pm1(a))
            assert z.tolist() == naive_matvec(W, a)

    def test_gated_transpose_matches_oracle(self):
        """gated_matvec_transpose equals sum_i g_i b_i W_ij."""
        for i in range(INSTANCES):
            cols = SIZES[i % len(SIZES)]
            rows = SIZES[(i * 7) % len(SIZES)] if i % 25 == 0 else int(self.rng.integers(1, 9))
            W, b = random_pm1(self.rng, rows, cols), random_pm1(self.rng, rows)
            g = self.rng.integers(0, 2, size=rows)
            v = gated_matvec_transpose(
                PackedBitMatrix.from_pm1(W), GateVector.from_mask(g.astype(bool)), BitVector.from_pm1(b)
            )
            assert v.tolist() == naive_gated_transpose(W, g, b)

    def test_outer_matches_oracle(self):
        """outer_pm1 equals the naive outer product."""
        for i in range(INSTANCES):
            cols = SIZES[i % len(SIZES)]
            rows = int(self.rng.integers(1, 9))
            u, v = random_pm1(self.rng, rows), random_pm1(self.rng, cols)
            packed = outer_pm1(BitVector.from_pm1(u), BitVector.from_pm1(v))
            assert packed.to_pm1().tolist() == naive_outer(u, v)

    def test_batched_matmul_matches_rows(self):
        """matmul_pm1 row n equals matvec_pm1 on input n."""
        W = PackedBitMatrix.from_pm1(random_pm1(self.rng, 9, 130))
        X = PackedBitMatrix.from_pm1(random_pm1(self.rng, 5, 130))
        Z = matmul_pm1(W, X)
        for n in range(5):
            assert np.array_equal(Z[n], matvec_pm1(W, X.row(n)))

    def test_batched_gated_transpose_matches_rows(self):
        """gated_matmul_transpose row n equals the single-sample kernel."""
        W = PackedBitMatrix.from_pm1(random_pm1(self.rng, 70, 12))
        gates = PackedBitMatrix.from_bits(self.rng.integers(0, 2, size=(4, 70)).astype(bool))
        targets = PackedBitMatrix.from_pm1(random_pm1(self.rng, 4, 70))
        V = gated_matmul_transpose(W, gates, targets)
        for n in range(4):
            single = gated_matvec_transpose(W, GateVector(70, gates.data[n]), targets.row(n))
            assert np.array_equal(V[n], single)

    def test_masked_outer_sum_matches_per_sample_sum(self):
        """The aggregated update equals the sum of per-sample masked outer products."""
        n, k, f = 6, 10, 67
        T = random_pm1(self.rng, n, k)
        X = random_pm1(self.rng, n, f)
        M = self.rng.random((n, k)) < 0.3
        expected = np.zeros((k, f), dtype=np.int64)
        for mu in range(n):
            outer = np.array(naive_outer(T[mu], X[mu]))
            expected += np.where(M[mu][:, None], outer, 0)
        got = masked_outer_sum(PackedBitMatrix.from_pm1(T), M, PackedBitMatrix.from_pm1(X))
        assert np.array_equal(got, expected)


class TestPackedBitMatrix:
    """Matrix helpers and dimension checks."""

    def test_transpose(self):
        """T swaps rows and columns."""
        values = random_pm1(np.random.default_rng(3), 3, 70)
        m = PackedBitMatrix.from_pm1(values)
        assert np.array_equal(m.T.to_pm1(), values.T)

    def test_select_and_concat(self):
        """Row selection and concatenation keep rows intact."""
        values = random_pm1(np.random.default_rng(4), 5, 9)
        m = PackedBitMatrix.from_pm1(values)
        picked = m.select([4, 0])
        assert np.array_equal(picked.to_pm1(), values[[4, 0]])
        joined = PackedBitMatrix.concat([picked, m.select([1])])
        assert np.array_equal(joined.to_pm1(), values[[4, 0, 1]])

    def test_stack_requires_width_for_empty(self):
        """Stacking nothing needs an explicit width."""
        assert PackedBitMatrix.stack([], cols=10).shape == (0, 10)
        with pytest.raises(ValueError):
            PackedBitMatrix.stack([])

    def test_dimension_mismatch_raises(self):
        """Mismatched operand lengths raise DimensionError."""
        with pytest.raises(DimensionError):
            dot_pm1(BitVector.ones(3), BitVector.ones(4))
        with pytest.raises(DimensionError):
            matvec_pm1(PackedBitMatrix.from_pm1(np.ones((2, 3), dtype=int)), BitVector.ones(4))
        with pytest.raises(DimensionError):
            gated_matvec_transpose(
                PackedBitMatrix.from_pm1(np.ones((2, 3), dtype=int)), GateVector.ones(3), BitVector.ones(2)
            )
