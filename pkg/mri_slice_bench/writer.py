from __future__ import annotations
import logging
import pathlib
import re
from typing import Iterable, Sequence, Union

import numpy as np
import pandas as pd

from .exceptions import MalformedCsvError, OutputError, ValidationError
from .preprocess import GrayImage, RgbImage

logger = logging.getLogger(__name__)

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def ensure_dir(path: pathlib.Path) -> None:
    """mkdir -p for an output directory; failures surface as OutputError."""
    try:
        pathlib.Path(path).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"Cannot create directory {path}: {e}") from e


def slice_filename(stem: str, index: int, ext: str = "pgm") -> str:
    """
    Filename pattern: <STEM>_Image_<n>.<ext>
    - STEM is the volume file name without .nii
    - n is the original slice index (clipped slices leave gaps)
    """
    return f"{stem}_Image_{index}.{ext}"


def write_bytes(path: pathlib.Path, data: bytes) -> pathlib.Path:
    path = pathlib.Path(path)
    try:
        path.write_bytes(data)
    except OSError as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    return path


def encode_pnm(img: Union[GrayImage, RgbImage]) -> bytes:
    """Binary PGM (P5) for gray images, PPM (P6) for RGB; rows top to bottom."""
    magic = b"P6" if isinstance(img, RgbImage) else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + np.ascontiguousarray(img.pixels).tobytes()


def decode_pnm(data: bytes, name: str = "<bytes>") -> Union[GrayImage, RgbImage]:
    """Parse P5/P6 with maxval <= 255; '#' comments are allowed in the header."""
    tokens, pos = [], 0
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise ValidationError(f"{name}: truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, width, height, maxval = tokens
    if magic not in (b"P5", b"P6"):
        raise ValidationError(f"{name}: unsupported PNM magic {magic!r} (expected P5 or P6)")
    try:
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as e:
        raise ValidationError(f"{name}: malformed PNM header: {e}") from e
    if width < 1 or height < 1 or not 0 < maxval <= 255:
        raise ValidationError(f"{name}: unsupported PNM geometry {width}x{height} maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    raster = data[pos + 1 : pos + 1 + width * height * channels]
    if len(raster) != width * height * channels:
        raise ValidationError(f"{name}: raster has {len(raster)} bytes, expected {width * height * channels}")
    pixels = np.frombuffer(raster, dtype=np.uint8)
    if channels == 3:
        return RgbImage(pixels.reshape(height, width, 3).copy())
    return GrayImage(pixels.reshape(height, width).copy())


def write_pgm(img: Union[GrayImage, RgbImage], path: pathlib.Path) -> pathlib.Path:
    return write_bytes(path, encode_pnm(img))


def read_pgm(path: pathlib.Path) -> Union[GrayImage, RgbImage]:
    try:
        data = pathlib.Path(path).read_bytes()
    except OSError as e:
        raise ValidationError(f"Cannot read {path}: {e}") from e
    return decode_pnm(data, str(path))


def write_slices(images: Iterable[GrayImage], indices: Sequence[int], stem: str,
                 output_dir: pathlib.Path) -> list[pathlib.Path]:
    """
    Write one PGM per slice into output_dir.
    Returns list of written file paths.
    """
    ensure_dir(output_dir)
    written = []
    for img, index in zip(images, indices):
        written.append(write_pgm(img, pathlib.Path(output_dir) / slice_filename(stem, index)))
    return written


def write_frame(df: pd.DataFrame, path: pathlib.Path) -> pathlib.Path:
    """Comma-separated, header row, no index; floats keep full precision."""
    path = pathlib.Path(path)
    ensure_dir(path.parent)
    try:
        df.to_csv(path, index=False)
    except Exception as e:
        raise OutputError(f"Failed to write {path}: {e}") from e
    logger.debug("Wrote %d rows to %s", len(df), path)
    return path


def read_frame(path: pathlib.Path, required: Sequence[str] = ()) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except FileNotFoundError as e:
        raise MalformedCsvError(f"CSV file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise MalformedCsvError(f"Cannot parse {path}: {e}") from e
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise MalformedCsvError(f"{path} is missing column(s): {', '.join(missing)}")
    return df


def history_frame(history: Sequence) -> pd.DataFrame:
    """Per-epoch CNN history (EpochRecord list) as a table."""
    columns = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]
    return pd.DataFrame([{c: getattr(r, c) for c in columns} for r in history], columns=columns)
