"""
3D volume -> ordered 2D slices along the stored z axis, plus 8-bit quantization.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .exceptions import ValidationError
from .preprocess import GrayImage
from .utils import round_half_up
from .volume_io import Volume3D

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Slice2D:
    """
    One z-plane. ``pixels`` has shape (height, width) = (nx, ny) and is
    indexed [x, y]; ``flat`` gives the storage order (x fastest).
    """

    index: int
    pixels: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValidationError(f"slice pixels must be a non-empty 2D array, got shape {self.pixels.shape}")
        if self.index < 0:
            raise ValidationError(f"slice index must be >= 0, got {self.index}")

    @property
    def name(self) -> str:
        return f"Image_{self.index}"

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.pixels.ravel(order="F")

    @property
    def is_quantized(self) -> bool:
        return self.pixels.dtype == np.uint8

    def to_gray(self) -> GrayImage:
        if not self.is_quantized:
            raise ValidationError(f"{self.name} is not quantized; call quantize_u8 first")
        return GrayImage(self.pixels)


def extract_slices(vol: Volume3D) -> List[Slice2D]:
    """Slice n is the plane z = n, for n in 0..nz-1 (z exclusive)."""
    return [Slice2D(index=n, pixels=vol.voxels[:, :, n]) for n in range(vol.nz)]


def quantize_u8(slice_: Slice2D, vmin: float, vmax: float) -> Slice2D:
    """
    Map [vmin, vmax] linearly onto 0..255 with round-half-up; values outside
    are clamped. A degenerate range (vmin == vmax) yields an all-zero slice
    with ``degenerate`` set.
    """
    if vmin > vmax:
        raise ValidationError(f"vmin ({vmin}) must be <= vmax ({vmax})")
    if vmin == vmax:
        logger.warning("Degenerate intensity range for %s (vmin == vmax == %s)", slice_.name, vmin)
        return Slice2D(index=slice_.index, pixels=np.zeros(slice_.pixels.shape, dtype=np.uint8), degenerate=True)
    scaled = (np.clip(slice_.pixels, vmin, vmax) - vmin) / (vmax - vmin) * 255.0
    q = np.clip(round_half_up(scaled), 0, 255).astype(np.uint8)
    return Slice2D(index=slice_.index, pixels=q)


def volume_range(vol: Volume3D) -> tuple[float, float]:
    return float(vol.voxels.min()), float(vol.voxels.max())


def slice_volume(vol: Volume3D) -> List[Slice2D]:
    """Extract all slices and quantize them with one per-volume mapping."""
    vmin, vmax = volume_range(vol)
    return [quantize_u8(s, vmin, vmax) for s in extract_slices(vol)]
