import os
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from crossbarnet.dataio import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    AugmentSpec,
    CountMismatchError,
    DataError,
    Dataset,
    IdxMagicError,
    IdxTruncatedError,
    augment,
    feature_stats,
    load_idx,
    load_image_manifest,
    normalize_features,
    read_idx,
    write_idx,
)

MNIST_DIR = Path(os.environ.get("MNIST_DIR", "/root/data/mnist"))


@pytest.fixture
def idx_pair(tmp_path):
    images = np.zeros((1, 2, 3), np.uint8)
    images[0, 1, 2] = 255
    images[0, 0, 0] = 51
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lab", np.array([7], np.uint8))
    return tmp_path / "img", tmp_path / "lab"


class TestIdx:
    def test_scaling(self, idx_pair):
        data = load_idx(*idx_pair)
        assert len(data) == 1
        assert data.images.shape == (1, 2, 3, 1)
        assert data.images[0, 1, 2, 0] == 1.0
        assert data.images[0, 0, 0, 0] == pytest.approx(0.2)
        assert data.labels.tolist() == [7]

    def test_header_layout(self, idx_pair):
        raw = idx_pair[0].read_bytes()
        assert struct.unpack(">IIII", raw[:16]) == (IDX_IMAGES_MAGIC, 1, 2, 3)
        assert struct.unpack(">II", idx_pair[1].read_bytes()[:8]) == (IDX_LABELS_MAGIC, 1)

    def test_bad_magic(self, idx_pair):
        with pytest.raises(IdxMagicError):
            load_idx(idx_pair[1], idx_pair[0])

    def test_truncated(self, idx_pair, tmp_path):
        cut = tmp_path / "cut"
        cut.write_bytes(idx_pair[0].read_bytes()[:-1])
        with pytest.raises(IdxTruncatedError):
            load_idx(cut, idx_pair[1])

    def test_count_mismatch(self, idx_pair, tmp_path):
        write_idx(tmp_path / "two", np.array([1, 2], np.uint8))
        with pytest.raises(CountMismatchError):
            load_idx(idx_pair[0], tmp_path / "two")

    def test_errors_are_distinct(self):
        kinds = {IdxMagicError, IdxTruncatedError, CountMismatchError}
        assert len(kinds) == 3
        assert all(issubclass(k, DataError) for k in kinds)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
    def test_roundtrip_bytes(self, n, side, seed):
        import tempfile
        arr = np.random.default_rng(seed).integers(0, 256, (n, side, side)).astype(np.uint8)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "x"
            write_idx(path, arr)
            np.testing.assert_array_equal(read_idx(path, IDX_IMAGES_MAGIC), arr)

    @pytest.mark.skipif(not (MNIST_DIR / "train-images-idx3-ubyte").exists(),
                        reason="MNIST IDX files not present")
    def test_official_mnist(self):
        train = load_idx(MNIST_DIR / "train-images-idx3-ubyte", MNIST_DIR / "train-labels-idx1-ubyte")
        test = load_idx(MNIST_DIR / "t10k-images-idx3-ubyte", MNIST_DIR / "t10k-labels-idx1-ubyte")
        assert len(train) == 60000 and train.shape == (28, 28, 1)
        assert len(test) == 10000 and test.shape == (28, 28, 1)
        assert 0.0 <= train.images.min() and train.images.max() <= 1.0


class TestManifest:
    def test_loads_grayscale(self, tmp_path):
        (tmp_path / "imgs").mkdir()
        for i, v in enumerate([0, 128, 255]):
            Image.fromarray(np.full((5, 4), v, np.uint8)).save(tmp_path / "imgs" / f"{i}.png")
        (tmp_path / "m.txt").write_text("imgs/0.png 0\nimgs/1.png 1\n\nimgs/2.png 1\n")
        data = load_image_manifest(tmp_path / "m.txt")
        assert data.shape == (5, 4, 1)
        assert data.labels.tolist() == [0, 1, 1]
        assert data.images[2].max() == 1.0
        assert data.images[1, 0, 0, 0] == pytest.approx(128 / 255)

    def test_bad_line(self, tmp_path):
        (tmp_path / "m.txt").write_text("just-a-path\n")
        with pytest.raises(DataError):
            load_image_manifest(tmp_path / "m.txt")

    def test_missing_image(self, tmp_path):
        (tmp_path / "m.txt").write_text("nope.png 0\n")
        with pytest.raises(DataError):
            load_image_manifest(tmp_path / "m.txt")


def grid(values):
    return Dataset(np.asarray(values, float).reshape(len(values), 1, 1), np.zeros(len(values), int))


class TestNormalize:
    def test_constant_feature(self):
        tr, te, _ = normalize_features(grid([0.3] * 5), grid([0.3, 0.3]))
        np.testing.assert_allclose(tr.images, 0.5)
        np.testing.assert_allclose(te.images, 0.5)

    def test_two_values(self):
        tr, _, stats = normalize_features(grid([0.0, 1.0] * 3))
        assert stats.mean.item() == 0.5
        # z = +-0.5 / sqrt(0.25 + eps) -> 0.5 +- 0.5/sqrt(1 + 4 eps)
        hi = 0.5 + 0.25 / np.sqrt(0.25 + 1e-5)
        np.testing.assert_allclose(sorted(set(tr.images.ravel())), [1 - hi, hi], rtol=1e-12)

    def test_stats_from_train_only(self):
        tr, te, stats = normalize_features(grid([0.0, 0.2, 0.4]), grid([1.0]))
        assert stats.mean.item() == pytest.approx(0.2)
        assert te.images.item() == 1.0  # far above the train range, clamped

    @settings(max_examples=40)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
    def test_mean_half_before_clamp(self, values):
        data = grid(values)
        stats = feature_stats(data)
        raw = stats.apply(data, clamp=False).images
        assert abs(raw.mean() - 0.5) <= 1e-9

    @settings(max_examples=40)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=30))
    def test_affine_and_order_preserving(self, values):
        data = grid(values)
        raw = feature_stats(data).apply(data, clamp=False).images.ravel()
        x = np.asarray(values)
        order = np.argsort(x, kind="stable")
        assert np.all(np.diff(raw[order]) >= -1e-12)
        if np.ptp(x) > 1e-6:
            slope = np.polyfit(x, raw, 1)
            np.testing.assert_allclose(np.polyval(slope, x), raw, atol=1e-8)

    def test_clamped_range(self):
        rng = np.random.default_rng(0)
        tr, _, _ = normalize_features(Dataset(rng.beta(0.3, 3, (50, 4, 4)), np.zeros(50, int)))
        assert tr.images.min() >= 0 and tr.images.max() <= 1


class TestAugment:
    def digit(self):
        img = np.zeros((28, 28, 1))
        img[6:22, 12:16] = 1.0
        img[6:9, 9:19] = 0.7
        return img

    def test_zero_spec_identity(self):
        img = self.digit()
        out = augment(img, AugmentSpec(0, 0, 0), seed=3)
        np.testing.assert_allclose(out, img, atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_blank_stays_blank(self, seed):
        assert not augment(np.zeros((28, 28, 1)), seed=seed).any()

    def test_seeded(self):
        img = self.digit()
        np.testing.assert_array_equal(augment(img, seed=5), augment(img, seed=5))
        assert not np.array_equal(augment(img, seed=5), augment(img, seed=6))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31))
    def test_shape_and_range(self, seed):
        img = np.random.default_rng(seed).uniform(size=(12, 10, 2))
        out = augment(img, seed=seed)
        assert out.shape == img.shape
        assert out.min() >= 0 and out.max() <= 1

    def test_pure_shift(self):
        from crossbarnet.dataio import affine_warp
        img = self.digit()
        out = affine_warp(img, 0.0, 2.0, -1.0, 1.0)
        np.testing.assert_allclose(out[8:24, 11:15], img[6:22, 12:16], atol=1e-12)
