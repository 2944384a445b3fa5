"""Block-missingness mask generation and the corruption process.

Masks are binary (H, W) arrays with 1 = observed, 0 = missing.  The missing
region is a union of square blocks.  Under MCAR the block count/size is drawn
uniformly from a per-dataset table independently of everything else; under
MNAR each class label is assigned a fixed block count/size, so the mask
statistics are predictive of the label.
"""

from dataclasses import dataclass

import numpy as np

from maskedvae import rng


@dataclass(frozen=True)
class MaskConfig:
    """Number of square missing blocks and their side length in pixels."""

    block_count: int
    block_side: int

    def __post_init__(self):
        if self.block_count < 1:
            raise ValueError(f"block_count must be positive, got {self.block_count}")
        if self.block_side < 1 or self.block_side % 2 == 0:
            raise ValueError(
                f"block_side must be a positive odd integer, got {self.block_side}"
            )


@dataclass(frozen=True)
class MaskedSample:
    """One image with its mask and corrupted view.

    x_tilde equals x at observed pixels and the fill value (0 for zero
    imputation) at missing ones.
    """

    x: np.ndarray
    m: np.ndarray
    x_tilde: np.ndarray
    label: int

    @classmethod
    def zero_filled(cls, x, m, label):
        return cls(x=x, m=m, x_tilde=corrupt_zero(x, m), label=int(label))


MNIST_MASK_TABLE = (
    MaskConfig(10, 5),
    MaskConfig(12, 5),
    MaskConfig(5, 7),
    MaskConfig(6, 7),
    MaskConfig(3, 9),
    MaskConfig(4, 9),
    MaskConfig(2, 11),
    MaskConfig(3, 11),
    MaskConfig(1, 13),
    MaskConfig(1, 15),
)

SVHN_MASK_TABLE = (
    MaskConfig(12, 5),
    MaskConfig(5, 7),
    MaskConfig(6, 7),
    MaskConfig(3, 9),
    MaskConfig(4, 9),
    MaskConfig(2, 11),
    MaskConfig(3, 11),
    MaskConfig(2, 13),
    MaskConfig(1, 15),
    MaskConfig(1, 17),
)

MASK_TABLES = {"mnist": MNIST_MASK_TABLE, "svhn": SVHN_MASK_TABLE}


def _check_fits(config: MaskConfig, h: int, w: int) -> None:
    if config.block_side > min(h, w):
        raise ValueError(
            f"block side {config.block_side} exceeds image size {h}x{w}"
        )


def sample_block_anchors(config: MaskConfig, h, w, gen) -> np.ndarray:
    """Draw top-left anchors for each block, uniform over the full image.

    Blocks anchored near the right/bottom edge are clipped at the border
    when rendered.  With the bundled tables this puts the expected missing
    fraction near 22% (28x28) and 19% (32x32).
    """
    _check_fits(config, h, w)
    rows = gen.integers(0, h, size=config.block_count)
    cols = gen.integers(0, w, size=config.block_count)
    return np.stack([rows, cols], axis=1)


def render_mask(anchors: np.ndarray, block_side: int, h, w) -> np.ndarray:
    """Build the binary mask whose zero-set is the union of the blocks."""
    mask = np.ones((h, w), dtype=np.uint8)
    for r, c in anchors:
        mask[r : r + block_side, c : c + block_side] = 0
    return mask


def sample_mcar_mask(table, h, w, gen) -> np.ndarray:
    """Sample a mask with block count/size uniform over the table."""
    config = table[int(gen.integers(0, len(table)))]
    anchors = sample_block_anchors(config, h, w, gen)
    return render_mask(anchors, config.block_side, h, w)


def assign_mnar_configs(table, num_classes: int, gen) -> dict:
    """Assign each class one config, independently uniform over the table.

    Collisions are allowed; the assignment is fixed for a run.
    """
    if num_classes < 1:
        raise ValueError(f"num_classes must be positive, got {num_classes}")
    picks = gen.integers(0, len(table), size=num_classes)
    return {label: table[int(i)] for label, i in enumerate(picks)}


def sample_mnar_mask(assignment: dict, label: int, h, w, gen) -> np.ndarray:
    """Sample a mask using the config assigned to the image's class."""
    try:
        config = assignment[int(label)]
    except KeyError:
        raise ValueError(f"label {label} has no assigned mask config") from None
    anchors = sample_block_anchors(config, h, w, gen)
    return render_mask(anchors, config.block_side, h, w)


def _broadcast_mask(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    # mask is per pixel; a missing pixel loses all channels
    if m.shape != x.shape[:-1]:
        raise ValueError(
            f"mask shape {m.shape} does not match image pixels {x.shape[:-1]}"
        )
    return m[..., np.newaxis].astype(x.dtype)


def corrupt_zero(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Zero imputation: keep observed pixels, set missing pixels to 0."""
    return x * _broadcast_mask(x, m)


def corrupt_mean(x: np.ndarray, m: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Mean imputation: keep observed pixels, fill missing ones from mu."""
    if mu.shape != x.shape[-3:]:
        raise ValueError(f"mean image shape {mu.shape} does not match {x.shape}")
    mb = _broadcast_mask(x, m)
    return x * mb + mu * (1.0 - mb)


def compute_mean_image(images: np.ndarray) -> np.ndarray:
    """Per-pixel arithmetic mean over a stack of uncorrupted images."""
    if len(images) == 0:
        raise ValueError("cannot compute the mean of an empty image stack")
    return images.mean(axis=0)


def generate_masks(
    table,
    h: int,
    w: int,
    count: int,
    root_seed: int,
    purpose: str,
    labels=None,
    num_classes: int = 10,
    assignment=None,
) -> np.ndarray:
    """Generate one frozen mask per image.

    Masks are sampled once at dataset-preparation time and stored, so the
    missingness is a fixed property of the corrupted dataset rather than a
    per-epoch augmentation.  Each image uses its own derived substream, so
    the result is independent of iteration order or parallelism.

    MCAR when ``labels`` is None; MNAR otherwise (block count/size keyed on
    the label).  Pass ``assignment`` to reuse one label-to-config map across
    several splits; by default a fresh one is drawn from ``root_seed``.
    """
    if labels is not None:
        if len(labels) != count:
            raise ValueError(f"{len(labels)} labels for {count} masks")
        if assignment is None:
            assignment = assign_mnar_configs(
                table,
                num_classes,
                rng.substream(root_seed, f"{purpose}/mnar-assignment"),
            )
    elif assignment is not None:
        raise ValueError("assignment requires labels")
    masks = np.empty((count, h, w), dtype=np.uint8)
    for i in range(count):
        gen = rng.substream(root_seed, f"{purpose}/mask", i)
        if assignment is None:
            masks[i] = sample_mcar_mask(table, h, w, gen)
        else:
            masks[i] = sample_mnar_mask(assignment, int(labels[i]), h, w, gen)
    return masks
