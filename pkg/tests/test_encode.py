"""Tests for input binarization and the fixed expansion layer."""

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from binprop.bitcore import BitVector, PackedBitMatrix
from binprop.data import Dataset
from binprop.encode import (
    Encoder,
    ThermometerCodec,
    binarize_median,
    encode_sign,
    encode_thermometer,
    encode_thermometer_rows,
    expand,
    expand_rows,
    fit_median,
    fit_thermometer,
    make_expansion,
)
from binprop.errors import ConfigError, DataError, DimensionError
from binprop.oracle import naive_matvec, sign
from binprop.types import EncoderSpec


class TestThermometer:
    """Quantile thresholds and thermometer codes."""

    def test_quantile_thresholds(self):
        """Nine values, two bits: thresholds at the 1/3 and 2/3 nearest-rank quantiles."""
        codec = fit_thermometer(np.arange(1, 10).reshape(-1, 1), 2)
        assert codec.thresholds.tolist() == [[3.0, 6.0]]
        assert codec.width == 2

    def test_strict_comparison(self):
        """A value equal to a threshold encodes as -1."""
        codec = ThermometerCodec(2, [[3.0, 6.0]])
        assert encode_thermometer(codec, [3.0]).to_pm1().tolist() == [-1, -1]
        assert encode_thermometer(codec, [4.0]).to_pm1().tolist() == [1, -1]
        assert encode_thermometer(codec, [7.0]).to_pm1().tolist() == [1, 1]

    def test_codes_are_monotone(self):
        """Raising a feature never turns a +1 bit back to -1."""
        rng = np.random.default_rng(0)
        train = rng.normal(size=(200, 3))
        codec = fit_thermometer(train, 5)
        values = np.sort(rng.normal(size=50))
        rows = np.stack([values, np.zeros(50), np.zeros(50)], axis=1)
        bits = encode_thermometer_rows(codec, rows).to_bits()[:, :5].astype(int)
        assert np.all(np.diff(bits, axis=0) >= 0)
        assert np.all(np.diff(bits, axis=1) <= 0)

    def test_feature_major_layout(self):
        """Bits of one feature are contiguous."""
        codec = ThermometerCodec(2, [[0.0, 1.0], [10.0, 20.0]])
        assert encode_thermometer(codec, [0.5, 25.0]).to_pm1().tolist() == [1, -1, 1, 1]

    def test_one_bit_equals_median(self):
        """A one-bit thermometer is median binarization."""
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(31, 16)).astype(float)
        assert fit_thermometer(images, 1).thresholds.tolist() == fit_median(images).thresholds.tolist()
        assert binarize_median(images) == encode_thermometer_rows(fit_thermometer(images, 1), images)

    def test_median_of_even_count(self):
        """With four values the lower middle value is the threshold."""
        codec = fit_median([[1.0], [2.0], [3.0], [4.0]])
        assert codec.thresholds.tolist() == [[2.0]]
        assert encode_thermometer_rows(codec, [[2.0], [3.0]]).to_pm1().tolist() == [[-1], [1]]

    def test_bad_inputs(self):
        """Non-finite values, decreasing thresholds and wrong widths are refused."""
        with pytest.raises(DataError):
            fit_thermometer([[1.0], [np.nan]], 2)
        with pytest.raises(ValueError):
            ThermometerCodec(2, [[2.0, 1.0]])
        with pytest.raises(ValueError):
            fit_thermometer([[1.0]], 0)
        with pytest.raises(DimensionError):
            encode_thermometer(ThermometerCodec(1, [[0.0]]), [1.0, 2.0])


class TestSignAndExpansion:
    """Identity packing and the random projection."""

    def test_encode_sign(self):
        """Positive entries become +1, everything else -1."""
        packed = encode_sign([[1, -1, 0, 3]])
        assert packed.to_pm1().tolist() == [[1, -1, -1, 1]]

    def test_expansion_is_seed_deterministic(self):
        """The same seed gives the same projection; another seed differs."""
        a = make_expansion(64, 10, seed=3)
        b = make_expansion(64, 10, seed=3)
        c = make_expansion(64, 10, seed=4)
        assert a.projection == b.projection
        assert a.projection != c.projection
        assert (a.in_width, a.out_width) == (10, 64)

    def test_expand_matches_naive_projection(self):
        """expand() is sign(R x) with ties to +1."""
        rng = np.random.default_rng(2)
        layer = make_expansion(40, 12, seed=9)
        R = layer.projection.to_pm1()
        for _ in range(30):
            x = rng.integers(0, 2, size=12) * 2 - 1
            expected = [sign(v) for v in naive_matvec(R, x)]
            assert expand(layer, BitVector.from_pm1(x)).to_pm1().tolist() == expected

    def test_expand_rows_matches_single(self):
        """Batched expansion equals row-wise expansion."""
        rng = np.random.default_rng(3)
        layer = make_expansion(33, 7, seed=1)
        codes = PackedBitMatrix.from_pm1(rng.integers(0, 2, size=(5, 7)) * 2 - 1)
        batch = expand_rows(layer, codes)
        for n in range(5):
            assert batch.row(n) == expand(layer, codes.row(n))

    def test_expand_width_checked(self):
        """Code width must match the projection."""
        with pytest.raises(DimensionError):
            expand(make_expansion(8, 4, seed=0), BitVector.ones(5))


class TestEncoder:
    """Fitted encoding pipelines."""

    def make_dataset(self, sequential=False):
        rng = np.random.default_rng(4)
        shape = (40, 3, 6) if sequential else (40, 6)
        return Dataset(rng.normal(size=shape), rng.integers(0, 2, size=40), 2)

    def test_identity_widths(self):
        """kind 'none' keeps one bit per feature."""
        encoder = Encoder.fit(EncoderSpec("none"), self.make_dataset())
        assert encoder.output_width == 6
        assert encoder.codec is None

    def test_thermometer_with_expansion(self):
        """Codes of F * bits bits expand to the configured width."""
        spec = EncoderSpec("thermometer", bits=4, expansion=100, expansion_seed=7)
        data = self.make_dataset()
        encoder = Encoder.fit(spec, data)
        encoded = encoder.encode(data)
        assert encoder.codec.width == 24
        assert encoder.output_width == 100
        assert encoded.width == 100 and encoded.steps == 1 and len(encoded) == 40

    def test_sequences_encode_frame_by_frame(self):
        """Each time step becomes its own packed matrix using shared thresholds."""
        data = self.make_dataset(sequential=True)
        encoder = Encoder.fit(EncoderSpec("median"), data)
        encoded = encoder.encode(data)
        assert encoded.steps == 3
        for t in range(3):
            assert encoded.frames[t] == encoder.encode_rows(data.inputs[:, t, :])

    def test_state_round_trip(self):
        """to_state plus thresholds rebuilds an encoder with identical output."""
        spec = EncoderSpec("thermometer", bits=3, expansion=50, expansion_seed=2)
        data = self.make_dataset()
        encoder = Encoder.fit(spec, data)
        rebuilt = Encoder.from_state(encoder.to_state(), np.array(encoder.codec.thresholds))
        assert rebuilt.encode(data).frames[0] == encoder.encode(data).frames[0]

    def test_row_width_checked(self):
        """Rows of the wrong width are refused."""
        encoder = Encoder.fit(EncoderSpec("median"), self.make_dataset())
        with pytest.raises(DimensionError):
            encoder.encode_rows(np.zeros((2, 5)))

    def test_spec_validation(self):
        """Unknown kinds and multi-bit medians are config errors."""
        with pytest.raises(ConfigError):
            EncoderSpec("fourier")
        with pytest.raises(ConfigError):
            EncoderSpec("median", bits=2)
