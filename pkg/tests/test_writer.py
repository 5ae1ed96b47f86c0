import numpy as np
import pandas as pd
import pytest

from mri_slice_bench.exceptions import MalformedCsvError, OutputError, ValidationError
from mri_slice_bench.preprocess import GrayImage, RgbImage
from mri_slice_bench.writer import (
    decode_pnm,
    encode_pnm,
    ensure_dir,
    read_frame,
    read_pgm,
    write_frame,
    write_pgm,
    write_slices,
)


def test_pgm_layout():
    img = GrayImage(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.uint8))
    assert encode_pnm(img) == b"P5\n3 2\n255\n\x01\x02\x03\x04\x05\x06"


def test_pgm_and_ppm_files_read_back(tmp_path):
    gray = GrayImage(np.random.default_rng(0).integers(0, 256, size=(5, 7)))
    rgb = RgbImage(np.random.default_rng(1).integers(0, 256, size=(3, 4, 3)))
    write_pgm(gray, tmp_path / "g.pgm")
    write_pgm(rgb, tmp_path / "c.ppm")
    assert np.array_equal(read_pgm(tmp_path / "g.pgm").pixels, gray.pixels)
    back = read_pgm(tmp_path / "c.ppm")
    assert isinstance(back, RgbImage) and np.array_equal(back.pixels, rgb.pixels)


def test_header_comments_are_skipped():
    data = b"P5\n# made by hand\n2 1\n# max\n255\n\x07\x08"
    assert decode_pnm(data).pixels.tolist() == [[7, 8]]


def test_first_raster_byte_may_look_like_whitespace():
    data = b"P5 2 1 255\n\x0a\x20"
    assert decode_pnm(data).pixels.tolist() == [[10, 32]]


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n1 1\n65535\n\x00\x00"])
def test_bad_pnm(data):
    with pytest.raises(ValidationError):
        decode_pnm(data)


def test_write_slices_names(tmp_path):
    imgs = [GrayImage(np.zeros((2, 2))) for _ in range(2)]
    paths = write_slices(imgs, [3, 9], "vol", tmp_path / "out")
    assert [p.name for p in paths] == ["vol_Image_3.pgm", "vol_Image_9.pgm"]


def test_write_frame_and_read_back(tmp_path):
    df = pd.DataFrame({"model": ["rf"], "accuracy": [0.5]})
    path = write_frame(df, tmp_path / "nested" / "t.csv")
    assert path.read_text().splitlines() == ["model,accuracy", "rf,0.5"]
    with pytest.raises(MalformedCsvError):
        read_frame(path, required=["epoch"])


def test_unwritable_target_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="file"):
        write_frame(pd.DataFrame({"a": [1]}), blocker / "t.csv")


def test_ensure_dir_creates_parents_and_reports_blockers(tmp_path):
    target = tmp_path / "out" / "AD" / "slices"
    ensure_dir(target)
    ensure_dir(target)
    assert target.is_dir()
    blocker = tmp_path / "taken"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="taken"):
        ensure_dir(blocker / "sub")
