import hashlib

import numpy as np
import pytest

from mri_slice_bench.exceptions import ValidationError
from mri_slice_bench.phantom import PhantomSpec, export_phantoms, generate_dataset, generate_volume
from mri_slice_bench.preprocess import equalize_histogram, foreground_fraction
from mri_slice_bench.slicer import slice_volume
from mri_slice_bench.volume_io import load_volume


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def test_same_spec_is_bit_identical():
    spec = PhantomSpec(class_label=1, seed=11)
    assert np.array_equal(generate_volume(spec).voxels, generate_volume(spec).voxels)


def test_classes_identical_without_signal_or_noise():
    base = PhantomSpec(seed=3, speckle_amplitude=0.0, noise_sigma=0.0)
    a = generate_volume(base.replace(class_label=0))
    b = generate_volume(base.replace(class_label=1))
    assert np.array_equal(a.voxels, b.voxels)


def test_values_stay_in_byte_range():
    vol = generate_volume(PhantomSpec(class_label=1, seed=0, noise_sigma=80.0))
    assert vol.voxels.min() >= 0.0 and vol.voxels.max() <= 255.0


def test_edge_and_central_slice_fractions():
    for label in (0, 1):
        slices = [s.to_gray() for s in slice_volume(generate_volume(PhantomSpec(class_label=label, seed=42)))]
        assert foreground_fraction(slices[8]) >= 0.3
        assert foreground_fraction(slices[0]) < 0.05
        assert foreground_fraction(slices[-1]) < 0.05


def test_equalization_widens_tissue_band():
    slices = slice_volume(generate_volume(PhantomSpec(class_label=1, seed=5)))
    for s in slices:
        gray = s.to_gray()
        tissue = gray.pixels > 0
        if np.unique(gray.pixels[tissue]).size < 2:
            continue
        eq = equalize_histogram(gray).pixels[tissue]
        before = np.ptp(gray.pixels[tissue].astype(int))
        assert np.ptp(eq.astype(int)) > before


def test_speckle_is_lateral_and_positive():
    spec = PhantomSpec(seed=9, noise_sigma=0.0)
    diff = generate_volume(spec.replace(class_label=1)).voxels - generate_volume(spec).voxels
    assert diff.min() == 0.0
    assert diff.max() == pytest.approx(6.0)
    assert not diff[:, 16:, :].any()
    assert diff[:, :16, :].any()


@pytest.mark.parametrize("kwargs", [{"semi_axes": (20.0, 12.0, 6.0)}, {"class_label": 2},
                                    {"tissue_band": (140.0, 100.0)}, {"speckle_density": 1.5}])
def test_invalid_specs(kwargs):
    with pytest.raises(ValidationError):
        PhantomSpec(**kwargs)


def test_dataset_counts():
    data = generate_dataset(1, base_seed=0)
    assert len(data) == 32
    assert data.labels.tolist() == [0] * 16 + [1] * 16
    assert data.sources[0] == ("phantom_NL_0", 0)


def test_full_size_split():
    data = generate_dataset(50, base_seed=42)
    assert len(data) == 1600
    assert (data.train.size, data.test.size) == (1280, 320)


def test_different_base_seeds_differ():
    a, b = generate_dataset(1, base_seed=1), generate_dataset(1, base_seed=2)
    digests_a = {_digest(img.pixels) for img, (_, idx) in zip(a.items, a.sources) if 3 <= idx <= 12}
    digests_b = {_digest(img.pixels) for img, (_, idx) in zip(b.items, b.sources) if 3 <= idx <= 12}
    assert not digests_a & digests_b


def test_export_round_trip(tmp_path):
    paths = export_phantoms(tmp_path, 1, base_seed=4)
    assert sorted(p.relative_to(tmp_path).as_posix() for p in paths) == [
        "AD/phantom_AD_000.nii", "NL/phantom_NL_000.nii"]
    vol = load_volume(tmp_path / "AD" / "phantom_AD_000.nii")
    expected = generate_volume(PhantomSpec(class_label=1, seed=4)).voxels.astype(np.float32)
    assert np.array_equal(vol.voxels, expected)
    first = [p.read_bytes() for p in paths]
    export_phantoms(tmp_path, 1, base_seed=4)
    assert [p.read_bytes() for p in paths] == first


def test_background_is_constant_even_with_noise():
    spec = PhantomSpec(class_label=1, seed=4, noise_sigma=20.0)
    voxels = generate_volume(spec).voxels
    assert np.all(voxels[:, :, 0] == spec.background_level)
    assert np.all(voxels[:, :, -1] == spec.background_level)
    assert voxels[0, 0, spec.nz // 2] == spec.background_level
    assert np.unique(voxels[:, :, spec.nz // 2]).size > 2
