"""Core data model: construction invariants, normalization, argmax."""

import numpy as np
import pytest

from ttaseg import LabelMap, ProbMap, UncertaintyMap, Volume, argmax_labels, normalize
from ttaseg.errors import DegenerateChannelError
from ttaseg.volume import array_to_bytes, bytes_to_array

from oracles import argmax_scan


def random_probmap(rng, classes=4, dims=(5, 5, 5)) -> ProbMap:
    raw = rng.random((classes,) + dims).astype(np.float32)
    raw /= raw.sum(axis=0)
    return ProbMap(raw)


class TestVolume:
    def test_promotes_3d_to_single_channel(self):
        v = Volume(np.zeros((4, 4, 4), dtype=np.float32))
        assert v.channels == 1
        assert v.dims == (4, 4, 4)

    def test_rejects_nonfinite(self):
        data = np.zeros((1, 2, 2, 2), dtype=np.float32)
        data[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            Volume(data)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError, match="spacing"):
            Volume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1.0, 0.0, 1.0))

    def test_data_is_read_only(self):
        v = Volume(np.zeros((2, 2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            v.data[0, 0, 0, 0] = 1.0


class TestLabelMap:
    def test_alphabet_validation(self):
        labels = np.array([[[0, 1], [2, 4]]], dtype=np.uint8).reshape(1, 2, 2)
        LabelMap(labels, alphabet=(0, 1, 2, 4))
        with pytest.raises(ValueError, match=r"\[4\]"):
            LabelMap(labels, alphabet=(0, 1, 2))

    def test_out_of_range_values_rejected(self):
        with pytest.raises(ValueError, match="uint8"):
            LabelMap(np.full((2, 2, 2), 300, dtype=np.int32))


class TestProbMap:
    def test_rejects_unnormalized(self):
        probs = np.full((2, 2, 2, 2), 0.6, dtype=np.float32)
        with pytest.raises(ValueError, match="sum to 1"):
            ProbMap(probs)

    def test_rejects_negative(self):
        probs = np.zeros((2, 2, 2, 2), dtype=np.float32)
        probs[0] = 1.2
        probs[1] = -0.2
        with pytest.raises(ValueError, match="nonnegative"):
            ProbMap(probs)

    def test_accepts_within_tolerance(self):
        probs = np.full((2, 1, 1, 1), 0.50004, dtype=np.float32)
        ProbMap(probs)


class TestUncertaintyMap:
    def test_rejects_negative_entropy(self):
        with pytest.raises(ValueError, match="negative"):
            UncertaintyMap(np.full((2, 2, 2), -0.5, dtype=np.float32))


class TestNormalize:
    def test_two_value_channel(self):
        # equally populated {1, 3}: mean 2, population std 1 -> {-1, +1}
        data = np.ones((1, 2, 2, 2), dtype=np.float32)
        data[0, 1] = 3.0
        out = normalize(Volume(data))
        assert np.allclose(out.data[0, 0], -1.0)
        assert np.allclose(out.data[0, 1], 1.0)

    def test_idempotent_on_standardized_channel(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(0.0, 1.0, (1, 12, 12, 12))
        raw = (raw - raw.mean()) / raw.std()
        v = Volume(raw.astype(np.float32))
        out = normalize(v, policy="all")
        assert np.allclose(out.data, v.data, atol=1e-6)

    def test_constant_channel_raises(self):
        data = np.full((1, 4, 4, 4), 7.0, dtype=np.float32)
        with pytest.raises(DegenerateChannelError, match="channel 0"):
            normalize(Volume(data))

    def test_mask_excludes_zeros_and_zeroes_background(self):
        data = np.zeros((1, 4, 4, 4), dtype=np.float32)
        data[0, :2] = 5.0
        data[0, 2] = 9.0
        out = normalize(Volume(data))
        assert np.all(out.data[0, 3] == 0.0)  # background stays zero
        inside = out.data[0][data[0] != 0]
        assert abs(inside.mean()) < 1e-4

    def test_masked_statistics_property(self):
        rng = np.random.default_rng(11)
        data = rng.uniform(10.0, 50.0, (3, 10, 10, 10)).astype(np.float32)
        data[:, :3] = 0.0  # synthetic background
        out = normalize(Volume(data))
        for ch in range(3):
            mask = data[ch] != 0
            sel = out.data[ch][mask].astype(np.float64)
            assert abs(sel.mean()) < 1e-4
            assert abs(sel.std() - 1.0) < 1e-3


class TestArgmaxLabels:
    def test_plain_maximum(self):
        probs = np.array([0.1, 0.7, 0.2], dtype=np.float32).reshape(3, 1, 1, 1)
        assert argmax_labels(ProbMap(probs)).labels[0, 0, 0] == 1

    def test_tie_breaks_to_smallest_class(self):
        probs = np.array([0.5, 0.5], dtype=np.float32).reshape(2, 1, 1, 1)
        assert argmax_labels(ProbMap(probs)).labels[0, 0, 0] == 0

    def test_alphabet_mapping(self):
        probs = np.array([0.1, 0.7, 0.2], dtype=np.float32).reshape(3, 1, 1, 1)
        out = argmax_labels(ProbMap(probs), labels=(0, 2, 4))
        assert out.labels[0, 0, 0] == 2

    def test_matches_per_voxel_scan(self):
        rng = np.random.default_rng(5)
        p = random_probmap(rng)
        expected = argmax_scan(p.probs)
        got = argmax_labels(p).labels
        assert np.array_equal(got, expected.astype(np.uint8))

    def test_wrong_alphabet_length(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError, match="alphabet"):
            argmax_labels(random_probmap(rng), labels=(0, 1))


class TestWireLayout:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        arr = rng.random((3, 4, 5, 6)).astype(np.float32)
        buf = array_to_bytes(arr)
        back = bytes_to_array(buf, 3, (4, 5, 6))
        assert np.array_equal(arr, back)

    def test_layout_is_channel_major_x_fastest(self):
        arr = np.arange(2 * 2 * 2 * 2, dtype=np.float32).reshape(2, 2, 2, 2)
        flat = np.frombuffer(array_to_bytes(arr), dtype="<f4")
        # first block: channel 0 with x varying fastest, then y, then z
        expected = [arr[0, 0, 0, 0], arr[0, 1, 0, 0], arr[0, 0, 1, 0],
                    arr[0, 1, 1, 0], arr[0, 0, 0, 1], arr[0, 1, 0, 1],
                    arr[0, 0, 1, 1], arr[0, 1, 1, 1]]
        assert np.array_equal(flat[:8], np.array(expected, dtype=np.float32))
        assert flat[8] == arr[1, 0, 0, 0]

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError, match="bytes"):
            bytes_to_array(b"\0" * 10, 1, (2, 2, 2))
