import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgesynth.exceptions import LabelRangeError, ShapeError, ZeroClassError
from edgesynth.labels import (
    MedianFrequencyWeights,
    class_weights,
    count_pixels,
    decode_classes,
    encode_classes,
    fuse,
)

masks = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.sampled_from([0, 255]))


class TestFuse:
    @pytest.mark.parametrize("m,e,out", [(255, 0, 128), (0, 0, 0), (255, 255, 255), (0, 255, 255)])
    def test_pixel_rule(self, m, e, out):
        assert fuse(np.array([[m]], np.uint8), np.array([[e]], np.uint8))[0, 0] == out

    @given(masks, st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_value_set_and_roi_subset(self, mask, seed):
        edges = np.where(np.random.default_rng(seed).random(mask.shape) < 0.3, 255, 0).astype(np.uint8)
        fused = fuse(mask, edges)
        assert set(np.unique(fused)) <= {0, 128, 255}
        assert not ((fused == 128) & (mask != 255)).any()

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            fuse(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8))

    def test_rejects_bad_mask_values(self):
        with pytest.raises(LabelRangeError):
            fuse(np.full((2, 2), 128, np.uint8), np.zeros((2, 2), np.uint8))


class TestClassWeights:
    def test_reference_counts(self):
        bg, fg = class_weights([45_564_000, 15_892_000])
        assert abs(bg - 0.674) <= 0.001
        assert abs(fg - 1.933) <= 0.001

    def test_equal_counts(self):
        np.testing.assert_array_equal(class_weights([7, 7, 7]), [1.0, 1.0, 1.0])

    def test_three_classes(self):
        np.testing.assert_allclose(class_weights([10, 20, 40]), [2.0, 1.0, 0.5], rtol=0, atol=1e-15)

    def test_zero_count(self):
        with pytest.raises(ZeroClassError):
            class_weights([10, 0])

    @given(st.lists(st.integers(1, 10**6), min_size=1, max_size=6), st.integers(1, 1000))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, counts, factor):
        np.testing.assert_allclose(class_weights(counts), class_weights([c * factor for c in counts]), rtol=1e-12)

    @given(st.lists(st.integers(1, 10**6), min_size=1, max_size=7).filter(lambda c: len(c) % 2 == 1))
    @settings(max_examples=30, deadline=None)
    def test_median_class_has_unit_weight(self, counts):
        w = class_weights(counts)
        med = int(np.argsort(counts, kind="stable")[len(counts) // 2])
        assert abs(w[med] - 1.0) < 1e-12

    def test_estimator(self):
        masks = [np.array([[0, 255], [0, 0]], np.uint8), np.array([[255, 0], [0, 0]], np.uint8)]
        est = MedianFrequencyWeights().fit(masks)
        np.testing.assert_array_equal(est.pixel_counts_, [6, 2])
        np.testing.assert_allclose(est.weights_, [4 / 6, 2.0])


class TestEncoding:
    def test_lookup(self):
        assert encode_classes(np.array([[128]], np.uint8), "fused")[0, 0] == 1
        assert encode_classes(np.array([[255]], np.uint8), "mask")[0, 0] == 1

    @given(arrays(np.uint8, (6, 5), elements=st.sampled_from([0, 128, 255])))
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, label):
        np.testing.assert_array_equal(decode_classes(encode_classes(label, "fused"), "fused"), label)

    def test_unexpected_value(self):
        with pytest.raises(LabelRangeError):
            encode_classes(np.array([[7]], np.uint8), "fused")
        with pytest.raises(LabelRangeError):
            encode_classes(np.array([[128]], np.uint8), "mask")


class TestCounting:
    def test_hand_count(self):
        np.testing.assert_array_equal(count_pixels([np.array([[0, 0], [1, 1]])]), [2, 2])

    def test_empty(self):
        np.testing.assert_array_equal(count_pixels([], 3), [0, 0, 0])

    def test_conservation_over_480_tiles(self):
        rng = np.random.default_rng(0)
        maps = [rng.integers(0, 2, size=(10, 10)) for _ in range(480)]
        assert count_pixels(maps).sum() == 480 * 10 * 10
