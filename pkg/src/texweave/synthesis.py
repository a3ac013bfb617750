"""Synthetic defect generation.

Normal texture images are corrupted by pasting patches of an external
anomaly-source corpus through Perlin-noise masks at a chosen opacity.
The same noise sampler also supplies the unpaired masks shown to the
mask-domain discriminator; those are drawn from independent streams so
they never align with the masks used for corruption.

Everything here is a pure function of its seed: regenerating a pool
with the same (index, count, window, seed) reproduces it exactly, and
per-sample seeds are derived independently so a parallel map over
samples would agree with the serial loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dataio
from .errors import MaskSamplingError, TexweaveError

# Octave choices for mask sampling: per-axis lattice resolutions.
MASK_OCTAVES = (1, 2, 4, 8, 16, 32)
# A sampling call fails after this many consecutive coverage rejections.
MAX_MASK_ATTEMPTS = 33
DEFAULT_COVERAGE_BOUNDS = (0.001, 0.4)

# Tags for deriving independent child seeds from one root seed.
_TAG_SAMPLE = 1
_TAG_UNPAIRED = 2
_TAG_MASK = 3


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed derived from integer parts."""
    state = np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


@dataclass(frozen=True)
class NoiseField:
    """Min-max normalized Perlin field with its sampling parameters."""

    values: np.ndarray
    seed: int
    octaves: tuple[int, int]


@dataclass(frozen=True)
class OpacityWindow:
    """Inclusive opacity range used when drawing a sample's blend opacity."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not 0.0 < self.lo <= self.hi <= 1.0:
            raise TexweaveError(f"opacity window needs 0 < lo <= hi <= 1, got {self}")


@dataclass(frozen=True)
class SynthSample:
    """One synthetic training sample.

    `normal` is None for samples loaded back from disk; the stored format
    keeps only the corrupted image and its mask. `synth_mask` is consumed
    only by evaluation; the trainer's losses never see it.
    """

    normal: np.ndarray | None
    defective: np.ndarray
    synth_mask: np.ndarray
    opacity: float
    seed: int


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lattice_noise(height: int, width: int, octaves: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Gradient-lattice noise on the pixel grid, raw scale roughly [-1, 1].

    The lattice is evaluated directly per pixel, so any (height, width)
    works with any octave pair; nothing needs to divide evenly.
    """
    res_y, res_x = int(octaves[0]), int(octaves[1])
    if res_y < 1 or res_x < 1:
        raise TexweaveError(f"octaves must be >= 1 per axis, got {octaves}")
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(res_y + 1, res_x + 1))
    grad_y = np.sin(angles)
    grad_x = np.cos(angles)

    ys = np.arange(height, dtype=np.float64) * (res_y / height)
    xs = np.arange(width, dtype=np.float64) * (res_x / width)
    cell_y = np.minimum(np.floor(ys).astype(np.int64), res_y - 1)
    cell_x = np.minimum(np.floor(xs).astype(np.int64), res_x - 1)
    frac_y = (ys - cell_y)[:, None]
    frac_x = (xs - cell_x)[None, :]

    def corner(off_y: int, off_x: int) -> np.ndarray:
        gy = grad_y[cell_y[:, None] + off_y, cell_x[None, :] + off_x]
        gx = grad_x[cell_y[:, None] + off_y, cell_x[None, :] + off_x]
        return gy * (frac_y - off_y) + gx * (frac_x - off_x)

    u = _fade(frac_y)
    v = _fade(frac_x)
    top = corner(0, 0) * (1.0 - v) + corner(0, 1) * v
    bottom = corner(1, 0) * (1.0 - v) + corner(1, 1) * v
    return math.sqrt(2.0) * (top * (1.0 - u) + bottom * u)


def perlin_fractal(height: int, width: int, octaves: tuple[int, int], seed: int) -> NoiseField:
    """Perlin noise min-max normalized to [0, 1].

    A degenerate constant field (possible only for pathological gradient
    draws) is retried with seed+1 up to 8 times before erroring.
    """
    if height < 1 or width < 1:
        raise TexweaveError(f"field shape must be positive, got {height}x{width}")
    attempt_seed = int(seed)
    for _ in range(9):
        rng = np.random.default_rng(attempt_seed)
        raw = _lattice_noise(height, width, octaves, rng)
        lo, hi = float(raw.min()), float(raw.max())
        if hi > lo:
            values = (raw - lo) / (hi - lo)
            return NoiseField(values=values, seed=int(seed), octaves=(int(octaves[0]), int(octaves[1])))
        attempt_seed += 1
    raise TexweaveError(
        f"noise field degenerate (constant) for shape {height}x{width}, octaves {octaves}, seed {seed}"
    )


def sample_mask(
    height: int,
    width: int,
    seed: int,
    threshold: float = 0.5,
    coverage_bounds: tuple[float, float] = DEFAULT_COVERAGE_BOUNDS,
) -> np.ndarray:
    """Draw a binary defect mask by thresholding Perlin noise.

    Octaves are redrawn per attempt from MASK_OCTAVES for each axis and
    the raw (pre-normalization) lattice field is thresholded at
    `threshold`, which puts typical coverage in the few-percent range
    where defect blobs belong. Draws are rejected until the positive
    fraction lands inside coverage_bounds.
    """
    if not 0.0 < threshold < 1.0:
        raise TexweaveError(f"threshold must be in (0, 1), got {threshold}")
    lo_bound, hi_bound = coverage_bounds
    if not 0.0 <= lo_bound < hi_bound <= 1.0:
        raise TexweaveError(f"bad coverage bounds {coverage_bounds}")
    for attempt in range(MAX_MASK_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        octaves = (
            int(rng.choice(MASK_OCTAVES)),
            int(rng.choice(MASK_OCTAVES)),
        )
        raw = _lattice_noise(height, width, octaves, rng)
        mask = (raw > threshold).astype(np.float32)
        coverage = float(mask.mean())
        if lo_bound <= coverage <= hi_bound:
            return mask
    raise MaskSamplingError(
        f"no mask with coverage in {coverage_bounds} after {MAX_MASK_ATTEMPTS} attempts "
        f"(seed {seed}, {height}x{width}); consider loosening the bounds"
    )


def blend_defect(normal: np.ndarray, source: np.ndarray, mask: np.ndarray, opacity: float) -> np.ndarray:
    """Paste `source` into `normal` through `mask` at the given opacity.

    Off-mask pixels are returned untouched; on-mask pixels are the convex
    combination opacity*source + (1-opacity)*normal, clipped to [-1, 1].
    """
    if normal.shape != source.shape:
        raise TexweaveError(f"shape mismatch: normal {normal.shape} vs source {source.shape}")
    if mask.shape != normal.shape[:2]:
        raise TexweaveError(f"mask shape {mask.shape} does not match image {normal.shape[:2]}")
    if not 0.0 <= opacity <= 1.0:
        raise TexweaveError(f"opacity must be in [0, 1], got {opacity}")
    weight = (mask > 0.5).astype(normal.dtype)[..., None]
    mixed = opacity * source + (1.0 - opacity) * normal
    out = normal * (1.0 - weight) + mixed * weight
    return np.clip(out, -1.0, 1.0).astype(normal.dtype, copy=False)


def opacity_window(
    regen_index: int,
    total_regens: int,
    hi_start: float = 1.0,
    hi_span: float = 0.6,
    width: float = 0.3,
    lo_floor: float = 0.1,
) -> OpacityWindow:
    """Progressive opacity window for regeneration k of K.

    hi(k) falls linearly from hi_start to hi_start - hi_span across the
    run; lo trails it by `width` but never below lo_floor. With a single
    regeneration there is no schedule to walk, so the window falls back
    to the full random baseline [lo_floor, hi_start].
    """
    if total_regens < 2:
        return OpacityWindow(lo_floor, hi_start)
    if not 0 <= regen_index < total_regens:
        raise TexweaveError(f"regen index {regen_index} outside [0, {total_regens})")
    hi = hi_start - hi_span * regen_index / (total_regens - 1)
    lo = max(lo_floor, hi - width)
    return OpacityWindow(lo, hi)


def _augment_source(source: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random 90-degree rotation, horizontal flip, per-channel brightness scale."""
    out = np.rot90(source, k=int(rng.integers(0, 4)), axes=(0, 1))
    if rng.random() < 0.5:
        out = out[:, ::-1, :]
    scale = rng.uniform(0.8, 1.2, size=3).astype(np.float32)
    display = (out + 1.0) * 0.5 * scale
    return (np.clip(display, 0.0, 1.0) * 2.0 - 1.0).astype(np.float32)


def regenerate_dataset(
    index: "dataio.DatasetIndex",
    count: int,
    window: OpacityWindow,
    seed: int,
    resolution: int,
) -> tuple[list[SynthSample], list[np.ndarray]]:
    """Build a fresh pool of `count` samples plus `count` unpaired masks.

    Each sample takes a random normal base and a randomly augmented
    anomaly source, blended through a freshly sampled mask at an opacity
    drawn uniformly from `window`. The unpaired masks come from seed
    streams disjoint from the sample masks, so mask i has no relation to
    sample i's corruption.
    """
    if count < 1:
        raise TexweaveError(f"count must be >= 1, got {count}")
    if not index.normal_train:
        raise TexweaveError(f"no normal training images under {index.root}")
    if not index.anomaly_sources:
        raise TexweaveError(
            "anomaly-source corpus is empty; point anomaly_dir at a directory "
            "of texture images to paste defects from"
        )

    image_cache: dict = {}

    def cached(path) -> np.ndarray:
        if path not in image_cache:
            image_cache[path] = dataio.load_image(path, resolution)
        return image_cache[path]

    samples: list[SynthSample] = []
    for i in range(count):
        sample_seed = derive_seed(seed, _TAG_SAMPLE, i)
        rng = np.random.default_rng(sample_seed)
        base = cached(index.normal_train[int(rng.integers(len(index.normal_train)))])
        source = cached(index.anomaly_sources[int(rng.integers(len(index.anomaly_sources)))])
        source = _augment_source(source, rng)
        mask = sample_mask(resolution, resolution, derive_seed(sample_seed, _TAG_MASK))
        opacity = float(rng.uniform(window.lo, window.hi))
        defective = blend_defect(base, source, mask, opacity)
        samples.append(
            SynthSample(normal=base, defective=defective, synth_mask=mask, opacity=opacity, seed=sample_seed)
        )

    unpaired = [
        sample_mask(resolution, resolution, derive_seed(seed, _TAG_UNPAIRED, i))
        for i in range(count)
    ]
    return samples, unpaired
