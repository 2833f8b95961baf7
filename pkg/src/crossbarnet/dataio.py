"""Dataset ingestion, feature normalization and training-time augmentation."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class IdxMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass
class Dataset:
    """``images`` is (N, H, W, C) float64 in [0, 1]; ``labels`` is (N,) int64."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n])


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Raw uint8 contents of an IDX file, shaped by its header dimensions."""
    with _open(path) as f:
        data = f.read()
    if len(data) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the IDX magic")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxTruncatedError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims))
    if len(data) - header < size:
        raise IdxTruncatedError(
            f"{path}: expected {size} data bytes, found {len(data) - header}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path) -> Dataset:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{images_path} has {len(images)} images, {labels_path} has {len(labels)} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def load_image_manifest(manifest_path) -> Dataset:
    """Read ``<relative-path> <label>`` lines; images are 8-bit grayscale files."""
    from PIL import Image

    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    images, labels = [], []
    for lineno, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rel, label = line.rsplit(maxsplit=1)
            label = int(label)
        except ValueError:
            raise DataError(f"{manifest_path}:{lineno}: expected '<path> <label>'") from None
        try:
            with Image.open(root / rel) as im:
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
        except OSError as e:
            raise DataError(f"{manifest_path}:{lineno}: {e}") from None
        if images and arr.shape != images[0].shape:
            raise DataError(f"{manifest_path}:{lineno}: image shape {arr.shape} "
                            f"differs from {images[0].shape}")
        images.append(arr)
        labels.append(label)
    if not images:
        raise DataError(f"{manifest_path}: no instances")
    return Dataset(np.stack(images).astype(np.float64) / 255.0, np.array(labels))


@dataclass
class FeatureStats:
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def apply(self, data: Dataset, clamp: bool = True) -> Dataset:
        z = (data.images - self.mean) / np.sqrt(self.var + self.eps)
        x = z / 2.0 + 0.5
        if clamp:
            x = np.clip(x, 0.0, 1.0)
        return Dataset(x, data.labels.copy())


def feature_stats(train: Dataset, eps: float = 1e-5) -> FeatureStats:
    if len(train) == 0:
        raise DataError("cannot compute feature statistics of an empty training set")
    return FeatureStats(train.images.mean(axis=0), train.images.var(axis=0), eps)


def normalize_features(train: Dataset, other: Dataset | None = None, eps: float = 1e-5):
    """Standardize each feature with training-split statistics, mapped into [0, 1].

    Returns ``(train_normalized, other_normalized, stats)``; ``other`` may be None.
    """
    stats = feature_stats(train, eps)
    return stats.apply(train), (stats.apply(other) if other is not None else None), stats


@dataclass(frozen=True)
class AugmentSpec:
    max_rotation_degrees: float = 7.5
    max_shift_pixels: float = 2.5
    max_rescale_fraction: float = 0.075


def draw_augment_params(spec: AugmentSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """(n, 4) rows of (angle_degrees, shift_y, shift_x, scale)."""
    r, s, f = spec.max_rotation_degrees, spec.max_shift_pixels, spec.max_rescale_fraction
    return np.column_stack([
        rng.uniform(-r, r, n),
        rng.uniform(-s, s, n),
        rng.uniform(-s, s, n),
        rng.uniform(1.0 - f, 1.0 + f, n),
    ])


def affine_warp(image: np.ndarray, angle_deg: float, shift_y: float, shift_x: float,
                scale: float) -> np.ndarray:
    """Rotate/scale about the image centre then shift; bilinear, zero fill."""
    h, w = image.shape[:2]
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    t = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    # output -> input coordinate map
    inv = rot.T / scale
    offset = centre - inv @ (centre + np.array([shift_y, shift_x]))
    out = np.empty_like(image, dtype=np.float64)
    for ch in range(image.shape[2]):
        out[..., ch] = ndimage.affine_transform(
            image[..., ch], inv, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def augment(image: np.ndarray, spec: AugmentSpec = AugmentSpec(), seed=0) -> np.ndarray:
    """Random rotation, per-axis shift and rescale of one (H, W, C) image."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    (params,) = draw_augment_params(spec, rng, 1)
    return affine_warp(image, *params)


def augment_batch(images: np.ndarray, params: np.ndarray) -> np.ndarray:
    return np.stack([affine_warp(img, *p) for img, p in zip(images, params)])
