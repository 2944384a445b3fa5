"""IDX binary container and dataset loading.

The IDX format (the MNIST distribution format) is: a 4-byte big-endian magic
number ``0x00 0x00 <type> <ndim>``, then ``ndim`` big-endian uint32 dimension
sizes, then row-major element data.  Only unsigned 8-bit elements
(type code 0x08) with 1 to 4 dimensions are supported here; that covers
images, labels and binary masks.
"""

import struct
from dataclasses import dataclass

import numpy as np

from maskedvae import rng

UBYTE_TYPE_CODE = 0x08
_MAX_NDIM = 4


class IdxFormatError(ValueError):
    """Raised when an IDX file violates the container format."""


def read_idx(path) -> np.ndarray:
    """Read an IDX file of unsigned bytes into a uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: truncated magic number at byte offset 0")
    zero0, zero1, type_code, ndim = struct.unpack(">BBBB", data[:4])
    if zero0 != 0 or zero1 != 0:
        raise IdxFormatError(f"{path}: malformed magic number at byte offset 0")
    if type_code != UBYTE_TYPE_CODE:
        raise IdxFormatError(
            f"{path}: unsupported element code 0x{type_code:02x} at byte offset 2"
        )
    if not 1 <= ndim <= _MAX_NDIM:
        raise IdxFormatError(
            f"{path}: unsupported dimension count {ndim} at byte offset 3"
        )
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxFormatError(f"{path}: truncated dimension header at byte offset 4")
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) < header_end + count:
        raise IdxFormatError(
            f"{path}: truncated payload at byte offset {len(data)} "
            f"(expected {header_end + count} bytes)"
        )
    if len(data) > header_end + count:
        raise IdxFormatError(
            f"{path}: trailing bytes at byte offset {header_end + count}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_end).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array (rank 1..4) as an IDX file."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if not 1 <= arr.ndim <= _MAX_NDIM:
        raise IdxFormatError(f"cannot write rank-{arr.ndim} array as IDX")
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, UBYTE_TYPE_CODE, arr.ndim))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


@dataclass(frozen=True)
class SplitSpec:
    """Train/validation/test counts plus the seed that picks the split."""

    train_count: int
    val_count: int
    test_count: int
    seed: int

    def __post_init__(self):
        if min(self.train_count, self.val_count, self.test_count) < 0:
            raise ValueError("split counts must be nonnegative")


@dataclass
class ImageDataset:
    """Images scaled to [0, 1] (NHWC) with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be NHWC, got shape {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError(
                f"{len(self.labels)} labels for {len(self.images)} images"
            )

    def __len__(self):
        return len(self.images)

    @property
    def image_shape(self):
        return self.images.shape[1:]


def _scale_images(raw: np.ndarray) -> np.ndarray:
    if raw.ndim == 3:
        raw = raw[..., np.newaxis]
    if raw.ndim != 4:
        raise ValueError(f"expected rank-3 or rank-4 image data, got rank {raw.ndim}")
    return raw.astype(np.float32) / 255.0


def load_pair(images_path, labels_path, name: str) -> ImageDataset:
    """Load one (images, labels) IDX pair, scaling pixels to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: labels must be rank 1, got {labels.ndim}")
    if len(images) != len(labels):
        raise ValueError(
            f"{len(images)} images but {len(labels)} labels "
            f"({images_path} / {labels_path})"
        )
    return ImageDataset(_scale_images(images), labels.astype(np.int64), name)


def split_train_val(dataset: ImageDataset, split: SplitSpec):
    """Split a training set into (train, val) by a seed-determined permutation."""
    n = len(dataset)
    if split.train_count + split.val_count != n:
        raise ValueError(
            f"train_count + val_count = {split.train_count + split.val_count} "
            f"but the source has {n} images"
        )
    perm = rng.substream(split.seed, "train-val-split").permutation(n)
    train_idx = np.sort(perm[: split.train_count])
    val_idx = np.sort(perm[split.train_count :])
    train = ImageDataset(
        dataset.images[train_idx], dataset.labels[train_idx], dataset.name
    )
    val = ImageDataset(dataset.images[val_idx], dataset.labels[val_idx], dataset.name)
    return train, val


def load_dataset(
    train_images_path,
    train_labels_path,
    test_images_path,
    test_labels_path,
    split: SplitSpec,
    name: str = "dataset",
):
    """Load (train, val, test) datasets; validation is carved out of the
    training file, the test file is used as-is."""
    source = load_pair(train_images_path, train_labels_path, name)
    train, val = split_train_val(source, split)
    test = load_pair(test_images_path, test_labels_path, name)
    if split.test_count and len(test) != split.test_count:
        raise ValueError(
            f"test file has {len(test)} images, split expects {split.test_count}"
        )
    return train, val, test
