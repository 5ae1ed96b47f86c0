"""
Slice preprocessing: grayscale conversion, near-skull-edge clipping and
global per-slice histogram equalization, composable via ``run_pipeline``.
"""
from __future__ import annotations
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import AllClippedError, ValidationError
from .metrics import Stopwatch

logger = logging.getLogger(__name__)

LEVELS = 256


def _as_u8(pixels, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != ndim or min(arr.shape[:2], default=0) < 1:
        raise ValidationError(f"{what} pixels must be a non-empty {ndim}D array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255 or not np.all(np.equal(np.mod(arr, 1), 0))):
            raise ValidationError(f"{what} pixels must be integers in 0..255")
        arr = arr.astype(np.uint8)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit single-channel image, shape (height, width), row-major."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixels", _as_u8(self.pixels, 2, "GrayImage"))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class RgbImage:
    """8-bit three-channel image, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = _as_u8(self.pixels, 3, "RgbImage")
        if arr.shape[2] != 3:
            raise ValidationError(f"RgbImage needs 3 channels, got {arr.shape[2]}")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


Image = Union[GrayImage, RgbImage]


@dataclass(frozen=True, eq=False)
class Histogram:
    bins: np.ndarray
    total: int


class ClipKind(str, enum.Enum):
    FOREGROUND = "foreground"
    CENTRAL = "central"


@dataclass(frozen=True)
class ClipPolicy:
    """
    FOREGROUND keeps slices whose Otsu foreground fraction is >= tau.
    CENTRAL keeps indices floor(keep_lo*n) <= i < ceil(keep_hi*n).
    """

    kind: ClipKind = ClipKind.FOREGROUND
    tau: float = 0.10
    keep_lo: float = 0.20
    keep_hi: float = 0.80

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ClipKind(self.kind))
        if not 0.0 <= self.tau <= 1.0:
            raise ValidationError(f"clip.tau must be in [0, 1], got {self.tau}")
        if not (0.0 <= self.keep_lo <= 1.0 and 0.0 <= self.keep_hi <= 1.0):
            raise ValidationError("clip.keep_lo and clip.keep_hi must be in [0, 1]")
        if not self.keep_lo < self.keep_hi:
            raise ValidationError(f"clip.keep_lo ({self.keep_lo}) must be < clip.keep_hi ({self.keep_hi})")

    def describe(self) -> str:
        if self.kind is ClipKind.FOREGROUND:
            return f"foreground(tau={self.tau:g})"
        return f"central({self.keep_lo:g}..{self.keep_hi:g})"


@dataclass(frozen=True)
class PipelineConfig:
    do_gray: bool = True
    do_equalize: bool = True
    clip: Optional[ClipPolicy] = field(default_factory=ClipPolicy)

    @classmethod
    def raw(cls) -> "PipelineConfig":
        """Quantized slices only: the 'before preprocessing' baseline."""
        return cls(do_gray=True, do_equalize=False, clip=None)


@dataclass
class ClipResult:
    indices: List[int]
    images: List[GrayImage]
    fractions: List[float]


@dataclass
class PipelineResult:
    images: List[GrayImage]
    kept_indices: List[int]
    fractions: List[float]
    timings: Dict[str, float]
    channels: int


def to_grayscale(img: RgbImage) -> GrayImage:
    """ITU-R BT.601 luma, round half up (exact integer arithmetic)."""
    rgb = img.pixels.astype(np.int64)
    weighted = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    gray = (2 * weighted + 1000) // 2000
    return GrayImage(np.clip(gray, 0, 255).astype(np.uint8))


def histogram(img: GrayImage) -> Histogram:
    bins = np.bincount(img.pixels.ravel(), minlength=LEVELS).astype(np.int64)
    return Histogram(bins=bins, total=int(bins.sum()))


def equalize_histogram(img: GrayImage) -> GrayImage:
    """
    h(v) = round_half_up((cdf(v) - cdf_min) / (N - cdf_min) * 255), with
    cdf_min the smallest nonzero CDF value. Constant images are returned
    unchanged.
    """
    hist = histogram(img)
    cdf = np.cumsum(hist.bins)
    n = hist.total
    cdf_min = int(cdf[np.flatnonzero(cdf)[0]])
    denom = n - cdf_min
    if denom == 0:
        return img
    lut = (2 * (cdf - cdf_min) * 255 + denom) // (2 * denom)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return GrayImage(lut[img.pixels])


def otsu_threshold(hist: Histogram) -> int:
    """
    Threshold t maximizing between-class variance for the split
    (<= t background, > t foreground). Candidates run from the lowest to one
    below the highest occupied level; ties go to the smallest t. A histogram
    with a single occupied level returns that level.
    """
    if hist.total < 1:
        raise ValidationError("otsu_threshold needs a non-empty histogram")
    counts = hist.bins.astype(np.int64)
    occupied = np.flatnonzero(counts)
    lo, hi = int(occupied[0]), int(occupied[-1])
    if lo == hi:
        return lo
    levels = np.arange(LEVELS, dtype=np.int64)
    w0 = np.cumsum(counts)
    m0 = np.cumsum(counts * levels)
    n, m = int(w0[-1]), int(m0[-1])
    ts = np.arange(lo, hi)
    w0_t, m0_t = w0[ts], m0[ts]
    w1_t = n - w0_t
    # w0*w1*(mu0-mu1)^2 == (n*m0 - m*w0)^2 / (w0*w1)
    spread = (n * m0_t - m * w0_t).astype(np.float64)
    between = spread * spread / (w0_t.astype(np.float64) * w1_t.astype(np.float64))
    return int(ts[int(np.argmax(between))])


def foreground_fraction(img: GrayImage) -> float:
    """Fraction of pixels strictly above the image's Otsu threshold."""
    t = otsu_threshold(histogram(img))
    return float(np.count_nonzero(img.pixels > t)) / img.pixels.size


def clip_slices(slices: Sequence[GrayImage], policy: ClipPolicy) -> ClipResult:
    """Keep the slices selected by ``policy``, in input order, with their original indices."""
    if not slices:
        raise ValidationError("clip_slices needs at least one slice")
    fractions = [foreground_fraction(s) for s in slices]
    n = len(slices)
    if policy.kind is ClipKind.FOREGROUND:
        keep = [i for i, f in enumerate(fractions) if f >= policy.tau]
    else:
        lo = math.floor(policy.keep_lo * n)
        hi = math.ceil(policy.keep_hi * n)
        keep = [i for i in range(n) if lo <= i < hi]
    if not keep:
        raise AllClippedError(f"policy {policy.describe()} removed all {n} slices")
    return ClipResult(indices=keep, images=[slices[i] for i in keep], fractions=fractions)


def run_pipeline(slices: Sequence[Image], config: PipelineConfig) -> PipelineResult:
    """
    Apply grayscale (RGB input only), clipping, then equalization. Returns
    the processed images, the kept original indices, every slice's
    foreground fraction (empty when clipping is off) and per-stage seconds.
    """
    if not slices:
        raise ValidationError("run_pipeline needs at least one slice")
    timings: Dict[str, float] = {}
    channels = 3 if any(isinstance(s, RgbImage) for s in slices) else 1

    with Stopwatch("gray") as sw:
        if channels == 3:
            if not config.do_gray:
                raise ValidationError("RGB input requires do_gray = true")
            gray = [to_grayscale(s) if isinstance(s, RgbImage) else s for s in slices]
        else:
            gray = list(slices)
    timings["gray"] = sw.seconds

    with Stopwatch("clip") as sw:
        if config.clip is not None:
            clipped = clip_slices(gray, config.clip)
            kept, images, fractions = clipped.indices, clipped.images, clipped.fractions
        else:
            kept, images, fractions = list(range(len(gray))), gray, []
    timings["clip"] = sw.seconds

    with Stopwatch("equalize") as sw:
        if config.do_equalize:
            images = [equalize_histogram(img) for img in images]
    timings["equalize"] = sw.seconds

    if len(kept) < len(gray):
        logger.debug("Clipped %d of %d slices", len(gray) - len(kept), len(gray))
    return PipelineResult(images=list(images), kept_indices=kept, fractions=fractions,
                          timings=timings, channels=channels)
