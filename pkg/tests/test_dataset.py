"""Dataset tests: IDX parsing, downsampling fidelity, batching."""

import gzip
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import idx_image_bytes, idx_label_bytes
from milptrain.dataset import (
    IdxCountMismatchError,
    IdxError,
    IdxMagicError,
    IdxTruncatedError,
    downsample_mean,
    downsample_set,
    load_idx,
    load_split,
    make_batches,
    one_hot,
    resolve_split,
)


def naive_downsample(image):
    out = np.zeros((7, 7))
    for r in range(7):
        for c in range(7):
            block = image[4 * r : 4 * r + 4, 4 * c : 4 * c + 4]
            out[r, c] = np.mean(block)
    return out


class TestIdxLoading:
    def test_round_trip_bit_exact(self, rng):
        pixels = rng.integers(0, 256, size=(6, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, size=6).astype(np.uint8)
        data = load_idx(
            io.BytesIO(idx_image_bytes(pixels)), io.BytesIO(idx_label_bytes(labels))
        )
        assert data.count == 6
        recovered = np.rint(data.images * 255.0).astype(np.uint8)
        np.testing.assert_array_equal(recovered, pixels)
        np.testing.assert_array_equal(data.labels, labels.astype(np.int64))
        assert data.images.dtype == np.float64
        assert data.images.min() >= 0.0 and data.images.max() <= 1.0

    def test_gzip_transparent(self, rng):
        pixels = rng.integers(0, 256, size=(3, 4, 5)).astype(np.uint8)
        labels = np.array([1, 2, 3], dtype=np.uint8)
        gz_images = gzip.compress(idx_image_bytes(pixels))
        gz_labels = gzip.compress(idx_label_bytes(labels))
        data = load_idx(io.BytesIO(gz_images), io.BytesIO(gz_labels))
        np.testing.assert_array_equal(
            np.rint(data.images * 255).astype(np.uint8), pixels
        )

    def test_bad_magic(self):
        payload = idx_image_bytes(np.zeros((1, 2, 2), dtype=np.uint8))
        corrupted = b"\x00\x00\x09\x99" + payload[4:]
        with pytest.raises(IdxMagicError):
            load_idx(io.BytesIO(corrupted), io.BytesIO(idx_label_bytes(np.array([0]))))

    def test_truncated_images(self):
        payload = idx_image_bytes(np.zeros((2, 3, 3), dtype=np.uint8))[:-5]
        with pytest.raises(IdxTruncatedError):
            load_idx(io.BytesIO(payload), io.BytesIO(idx_label_bytes(np.array([0, 1]))))

    def test_count_mismatch(self):
        images = idx_image_bytes(np.zeros((2, 2, 2), dtype=np.uint8))
        labels = idx_label_bytes(np.array([1]))
        with pytest.raises(IdxCountMismatchError):
            load_idx(io.BytesIO(images), io.BytesIO(labels))

    def test_paths_and_split_resolution(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(4, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, size=4).astype(np.uint8)
        (tmp_path / "train-images-idx3-ubyte").write_bytes(idx_image_bytes(pixels))
        (tmp_path / "train-labels-idx1-ubyte.gz").write_bytes(
            gzip.compress(idx_label_bytes(labels))
        )
        image_path, label_path = resolve_split(tmp_path, "train")
        assert image_path.endswith("train-images-idx3-ubyte")
        assert label_path.endswith(".gz")
        data = load_split(tmp_path, "train")
        assert data.count == 4

    def test_missing_split_files(self, tmp_path):
        with pytest.raises(IdxError):
            resolve_split(tmp_path, "test")

    def test_unknown_split_name(self, tmp_path):
        with pytest.raises(ValueError):
            resolve_split(tmp_path, "validation")


class TestDownsampling:
    def test_matches_naive_reference_exactly(self, rng):
        for _ in range(100):
            image = rng.uniform(0, 1, (28, 28))
            np.testing.assert_array_equal(downsample_mean(image), naive_downsample(image))

    def test_constant_image_invariance(self):
        image = np.full((28, 28), 0.37)
        np.testing.assert_array_equal(downsample_mean(image), np.full((7, 7), 0.37))

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            downsample_mean(np.zeros((27, 28)))

    def test_set_version_preserves_labels(self, rng):
        from milptrain.dataset import ImageSet

        images = rng.uniform(0, 1, (5, 28, 28))
        labels = np.arange(5)
        small = downsample_set(ImageSet(images, labels))
        assert small.images.shape == (5, 7, 7)
        np.testing.assert_array_equal(small.labels, labels)

    @given(seed=st.integers(0, 100_000))
    @settings(max_examples=30)
    def test_mean_preserved(self, seed):
        image = np.random.default_rng(seed).uniform(0, 1, (28, 28))
        assert downsample_mean(image).mean() == pytest.approx(image.mean(), abs=1e-12)


class TestBatching:
    def test_one_hot(self):
        v = one_hot(3)
        assert v.shape == (10,)
        assert v[3] == 1.0 and v.sum() == 1.0
        with pytest.raises(ValueError):
            one_hot(10)
        with pytest.raises(ValueError):
            one_hot(-1)

    def test_consecutive_batches_with_partial_tail(self, rng):
        from milptrain.dataset import ImageSet

        images = rng.uniform(0, 1, (25, 28, 28))
        labels = rng.integers(0, 10, 25)
        batches = make_batches(ImageSet(images, labels), 10)
        assert [b.size for b in batches] == [10, 10, 5]
        np.testing.assert_array_equal(batches[1].labels, labels[10:20])

    def test_flatten_is_row_major(self, rng):
        from milptrain.dataset import ImageSet

        images = rng.uniform(0, 1, (2, 28, 28))
        labels = np.array([0, 1])
        batch = make_batches(ImageSet(images, labels), 2)[0]
        np.testing.assert_array_equal(batch.inputs[0][:28], images[0][0])
        np.testing.assert_array_equal(batch.inputs[0][28:56], images[0][1])

    def test_targets_are_one_hot_rows(self, rng):
        from milptrain.dataset import ImageSet

        images = rng.uniform(0, 1, (4, 28, 28))
        labels = np.array([2, 0, 9, 2])
        batch = make_batches(ImageSet(images, labels), 4)[0]
        assert batch.targets.shape == (4, 10)
        np.testing.assert_array_equal(np.argmax(batch.targets, axis=1), labels)
        np.testing.assert_array_equal(batch.targets.sum(axis=1), np.ones(4))

    def test_label_out_of_range_rejected(self, rng):
        from milptrain.dataset import ImageSet

        images = rng.uniform(0, 1, (2, 28, 28))
        with pytest.raises(ValueError):
            make_batches(ImageSet(images, np.array([0, 11])), 2)

    def test_bad_batch_size(self, rng):
        from milptrain.dataset import ImageSet

        images = rng.uniform(0, 1, (2, 28, 28))
        with pytest.raises(ValueError):
            make_batches(ImageSet(images, np.array([0, 1])), 0)
