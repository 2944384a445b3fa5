"""Deterministic procedural digit corpus.

Renders seven-segment-style digit glyphs to 28x28 grayscale.  Each image
draws its own handwriting style: jittered junction points, curved strokes,
per-stroke width and brightness, plus slant, rotation, anisotropic scale,
and shift.  All drawing is driven by per-image substreams so generation is
order-independent and exactly reproducible from a seed.  Labels cycle
0..9, so classes are balanced.

This is the built-in stand-in corpus for running the training and
evaluation pipeline when no real dataset files are configured; it is not a
benchmark dataset.
"""

import numpy as np

from maskedvae import rng as rng_mod
from maskedvae.idx import ImageDataset

SIZE = 28

# junction points of the seven-segment skeleton in a unit box (x right, y up)
_VERTICES = {
    "TL": (0.2, 0.9),
    "TR": (0.8, 0.9),
    "ML": (0.2, 0.5),
    "MR": (0.8, 0.5),
    "BL": (0.2, 0.1),
    "BR": (0.8, 0.1),
}

# each stroke connects two junctions
_SEGMENTS = {
    "A": ("TL", "TR"),
    "B": ("TR", "MR"),
    "C": ("MR", "BR"),
    "D": ("BL", "BR"),
    "E": ("ML", "BL"),
    "F": ("TL", "ML"),
    "G": ("ML", "MR"),
}

_SEGMENT_NAMES = "ABCDEFG"

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGECD",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}

# pixel-center coordinates in glyph space (row 0 = top)
_COORDS = np.stack(
    np.meshgrid(
        (np.arange(SIZE) + 0.5) / SIZE,
        1.0 - (np.arange(SIZE) + 0.5) / SIZE,
        indexing="xy",
    ),
    axis=-1,
).reshape(-1, 2)


def _polyline_distance(points, verts):
    """Distance from each point to the polyline through ``verts``."""
    dist = np.full(len(points), np.inf)
    for p0, p1 in zip(verts[:-1], verts[1:]):
        d = p1 - p0
        length_sq = float(d @ d) + 1e-12
        t = np.clip(((points - p0) @ d) / length_sq, 0.0, 1.0)
        closest = p0 + t[:, np.newaxis] * d
        dist = np.minimum(dist, np.linalg.norm(points - closest, axis=1))
    return dist


def _bend(p0, p1, bow, steps=6):
    """Sample a quadratic arc from p0 to p1 bowed sideways by ``bow``."""
    d = p1 - p0
    perp = np.array([-d[1], d[0]]) / (np.hypot(d[0], d[1]) + 1e-12)
    ctrl = 0.5 * (p0 + p1) + bow * perp
    t = np.linspace(0.0, 1.0, steps + 1)[:, np.newaxis]
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * ctrl + t**2 * p1


def render_digit(digit: int, gen) -> np.ndarray:
    """One (28, 28) uint8 glyph in a per-image handwriting style."""
    # style draws come in a fixed order so every image costs the same
    verts = {
        k: np.asarray(v) + gen.uniform(-0.055, 0.055, size=2)
        for k, v in _VERTICES.items()
    }
    angle = gen.uniform(-0.25, 0.25)
    slant = gen.uniform(-0.35, 0.35)
    scale = gen.uniform(0.66, 0.94)
    aspect = gen.uniform(0.75, 1.2)
    shift = gen.uniform(-0.09, 0.09, size=2)
    base_width = gen.uniform(0.042, 0.080)
    base_bright = gen.uniform(0.70, 1.0)
    widths = {}
    brights = {}
    bows = {}
    for name in _SEGMENT_NAMES:
        widths[name] = np.clip(
            base_width * gen.uniform(0.78, 1.25), 0.030, 0.105
        )
        brights[name] = min(base_bright * gen.uniform(0.85, 1.15), 1.0)
        bows[name] = gen.uniform(-0.06, 0.06)

    # recenter on the used junctions so thin digits do not sit off-center
    used = sorted({v for s in _DIGIT_SEGMENTS[digit] for v in _SEGMENTS[s]})
    stack = np.stack([verts[v] for v in used])
    box_center = 0.5 * (stack.min(axis=0) + stack.max(axis=0))

    rot = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
    )
    shear = np.array([[1.0, slant], [0.0, 1.0]])
    grow = np.diag([scale * aspect, scale])
    frame = rot @ shear @ grow
    offset = np.array([0.5, 0.5]) + shift

    def to_image(pts):
        return (pts - box_center) @ frame.T + offset

    img = np.zeros(SIZE * SIZE)
    aa = 1.0 / SIZE
    for name in _DIGIT_SEGMENTS[digit]:
        a, b = _SEGMENTS[name]
        arc = to_image(_bend(verts[a], verts[b], bows[name]))
        dist = _polyline_distance(_COORDS, arc)
        # anti-aliased stroke: full intensity inside, ~1px linear falloff
        val = np.clip((widths[name] + aa - dist) / aa, 0.0, 1.0)
        img = np.maximum(img, val * brights[name])
    return np.round(img.reshape(SIZE, SIZE) * 255.0).astype(np.uint8)


def make_dataset(count: int, seed: int, purpose: str = "synthdigits",
                 name: str = "synthdigits") -> ImageDataset:
    """``count`` images with labels cycling 0..9, scaled to [0, 1]."""
    if count < 1:
        raise ValueError("count must be positive")
    raw = np.empty((count, SIZE, SIZE), dtype=np.uint8)
    labels = np.arange(count, dtype=np.int64) % 10
    for i in range(count):
        gen = rng_mod.substream(seed, f"{purpose}/image", i)
        raw[i] = render_digit(int(labels[i]), gen)
    return ImageDataset(
        raw[..., np.newaxis].astype(np.float32) / 255.0, labels, name
    )
