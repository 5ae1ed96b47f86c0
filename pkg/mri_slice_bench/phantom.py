"""
Deterministic synthetic two-class volumes.

A centered ellipsoid of "tissue" sits on a background. Tissue intensity
follows a radial profile inside a compressed band plus Gaussian noise;
class 1 (AD) additionally gets sparse positive speckle, confined by default
to one lateral half (y below the center).

The background is exactly ``background_level`` with no noise: noise and
speckle are added only inside the ellipsoid. Planes that miss the ellipsoid
are therefore constant, which keeps their Otsu foreground fraction at zero
so they stand in for near-skull-edge slices.

Randomness comes from numpy's PCG64 seeded with SeedSequence([seed, class_label]).
"""
from __future__ import annotations
import dataclasses
import logging
import pathlib
from dataclasses import dataclass
from typing import Iterator, List, Tuple

import numpy as np

from .dataset import CLASS_NAMES, Dataset, stratified_split
from .exceptions import ValidationError
from .slicer import slice_volume
from .volume_io import Volume3D, write_nifti
from .writer import ensure_dir, write_bytes

logger = logging.getLogger(__name__)

NIFTI_FLOAT32 = 16


@dataclass(frozen=True)
class PhantomSpec:
    nx: int = 32
    ny: int = 32
    nz: int = 16
    class_label: int = 0
    seed: int = 0
    semi_axes: Tuple[float, float, float] = (12.0, 12.0, 6.0)
    background_level: float = 8.0
    tissue_band: Tuple[float, float] = (100.0, 140.0)
    speckle_amplitude: float = 6.0
    speckle_density: float = 0.15
    noise_sigma: float = 2.0
    lateral_speckle: bool = True

    def __post_init__(self) -> None:
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValidationError("phantom dims must be positive")
        if self.class_label not in (0, 1):
            raise ValidationError(f"class_label must be 0 or 1, got {self.class_label}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        for axis, dim in zip(self.semi_axes, (self.nx, self.ny, self.nz)):
            if not 0 < 2 * axis <= dim:
                raise ValidationError(f"semi-axes {self.semi_axes} do not fit inside {self.nx}x{self.ny}x{self.nz}")
        lo, hi = self.tissue_band
        if not 0 <= self.background_level < lo <= hi <= 255:
            raise ValidationError("need 0 <= background_level < tissue_band[0] <= tissue_band[1] <= 255")
        if not 0 <= self.speckle_density <= 1 or self.speckle_amplitude < 0 or self.noise_sigma < 0:
            raise ValidationError("speckle density must be in [0, 1]; amplitude and noise must be >= 0")

    def replace(self, **changes) -> "PhantomSpec":
        return dataclasses.replace(self, **changes)


def _normalized_radius2(spec: PhantomSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Squared normalized ellipsoid radius per voxel, and the y offset from the center."""
    axes = [np.arange(n, dtype=np.float64) - (n - 1) / 2.0 for n in (spec.nx, spec.ny, spec.nz)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    a, b, c = spec.semi_axes
    return (x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2, y


def generate_volume(spec: PhantomSpec) -> Volume3D:
    shape = (spec.nx, spec.ny, spec.nz)
    rng = np.random.default_rng([spec.seed, spec.class_label])
    r2, y = _normalized_radius2(spec)
    inside = r2 <= 1.0
    lo, hi = spec.tissue_band
    base = hi - (hi - lo) * r2
    # both draws happen for either class so the streams stay aligned
    noise = rng.standard_normal(shape) * spec.noise_sigma
    speckled = rng.random(shape) < spec.speckle_density
    if spec.lateral_speckle:
        speckled &= y < 0
    speckle = np.where(speckled, spec.speckle_amplitude, 0.0) if spec.class_label == 1 else 0.0
    voxels = np.where(inside, base + noise + speckle, spec.background_level)
    return Volume3D(np.clip(voxels, 0.0, 255.0), name=phantom_name(spec.class_label, spec.seed))


def phantom_name(label: int, seed: int) -> str:
    return f"phantom_{CLASS_NAMES[label]}_{seed}"


def iter_phantoms(n_per_class: int, base_seed: int, template: PhantomSpec) -> Iterator[Tuple[int, int, Volume3D]]:
    """(label, index, volume) for index 0..n-1 of class NL, then of class AD; seeds are base_seed + index."""
    if n_per_class < 1:
        raise ValidationError(f"n_per_class must be >= 1, got {n_per_class}")
    for label in (0, 1):
        for i in range(n_per_class):
            yield label, i, generate_volume(template.replace(class_label=label, seed=base_seed + i))


def generate_dataset(n_per_class: int, base_seed: int, template: PhantomSpec = PhantomSpec()) -> Dataset:
    """Quantized slices of 2*n_per_class phantoms with a stratified 80/20 split seeded by base_seed."""
    items, labels, sources = [], [], []
    for label, _, vol in iter_phantoms(n_per_class, base_seed, template):
        for s in slice_volume(vol):
            items.append(s.to_gray())
            labels.append(label)
            sources.append((vol.name, s.index))
    train, test = stratified_split(labels, base_seed)
    return Dataset(items=items, labels=np.asarray(labels), train=train, test=test, sources=sources)


def export_phantoms(out_dir: pathlib.Path, n_per_class: int, base_seed: int,
                    template: PhantomSpec = PhantomSpec()) -> List[pathlib.Path]:
    """Write <out_dir>/{AD,NL}/phantom_<class>_<index>.nii (float32)."""
    out_dir = pathlib.Path(out_dir)
    written = []
    for label, i, vol in iter_phantoms(n_per_class, base_seed, template):
        class_dir = out_dir / CLASS_NAMES[label]
        ensure_dir(class_dir)
        path = class_dir / f"phantom_{CLASS_NAMES[label]}_{i:03d}.nii"
        write_bytes(path, write_nifti(vol, NIFTI_FLOAT32))
        written.append(path)
    logger.info("Wrote %d phantom volumes under %s", len(written), out_dir)
    return written
