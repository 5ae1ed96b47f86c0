"""
NIfTI-1 single-file (.nii) reading and writing.

Only the subset needed for structural scans is supported: datatypes
u8/i16/i32/f32/f64, either byte order, 3D volumes and 4D series (unrolled
into one Volume3D per time point). Orientation fields are parsed and kept
on the header but never applied.
"""
from __future__ import annotations
import logging
import os
import pathlib
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence, Union

import numpy as np

from .exceptions import (
    BadMagicError,
    BadSizeError,
    CompressedInputError,
    InvalidHeaderError,
    NiftiError,
    TooShortError,
    TruncatedDataError,
    UnsupportedDatatypeError,
    ValidationError,
    ValueOverflowError,
)

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
SINGLE_FILE_OFFSET = 352  # header + 4-byte extension flag

# first number in comments is the byte offset in the header
HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),      # 0
    ("data_type", "S10"),      # 4
    ("db_name", "S18"),        # 14
    ("extents", "i4"),         # 32
    ("session_error", "i2"),   # 36
    ("regular", "S1"),         # 38
    ("dim_info", "u1"),        # 39
    ("dim", "i2", (8,)),       # 40
    ("intent_p1", "f4"),       # 56
    ("intent_p2", "f4"),       # 60
    ("intent_p3", "f4"),       # 64
    ("intent_code", "i2"),     # 68
    ("datatype", "i2"),        # 70
    ("bitpix", "i2"),          # 72
    ("slice_start", "i2"),     # 74
    ("pixdim", "f4", (8,)),    # 76
    ("vox_offset", "f4"),      # 108
    ("scl_slope", "f4"),       # 112
    ("scl_inter", "f4"),       # 116
    ("slice_end", "i2"),       # 120
    ("slice_code", "u1"),      # 122
    ("xyzt_units", "u1"),      # 123
    ("cal_max", "f4"),         # 124
    ("cal_min", "f4"),         # 128
    ("slice_duration", "f4"),  # 132
    ("toffset", "f4"),         # 136
    ("glmax", "i4"),           # 140
    ("glmin", "i4"),           # 144
    ("descrip", "S80"),        # 148
    ("aux_file", "S24"),       # 228
    ("qform_code", "i2"),      # 252
    ("sform_code", "i2"),      # 254
    ("quatern_b", "f4"),       # 256
    ("quatern_c", "f4"),       # 260
    ("quatern_d", "f4"),       # 264
    ("qoffset_x", "f4"),       # 268
    ("qoffset_y", "f4"),       # 272
    ("qoffset_z", "f4"),       # 276
    ("srow_x", "f4", (4,)),    # 280
    ("srow_y", "f4", (4,)),    # 296
    ("srow_z", "f4", (4,)),    # 312
    ("intent_name", "S16"),    # 328
    ("magic", "S4"),           # 344
]
HEADER_DTYPE = np.dtype(HEADER_FIELDS)

# code -> (numpy dtype, bitpix)
DATATYPES = {
    2: (np.dtype(np.uint8), 8),
    4: (np.dtype(np.int16), 16),
    8: (np.dtype(np.int32), 32),
    16: (np.dtype(np.float32), 32),
    64: (np.dtype(np.float64), 64),
}
DATATYPE_NAMES = {2: "u8", 4: "i16", 8: "i32", 16: "f32", 64: "f64"}
MAGIC_SINGLE = b"n+1"
MAGIC_PAIRED = b"ni1"
_GZIP_MAGIC = b"\x1f\x8b"

ByteSource = Union[bytes, bytearray, memoryview, str, os.PathLike, BinaryIO]


@dataclass(frozen=True)
class NiftiHeader:
    """The parsed header fields this package relies on."""

    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    endianness: str = "<"
    pixdim: tuple[float, ...] = (1.0,) * 8
    qform_code: int = 0
    sform_code: int = 0
    descrip: str = ""

    def __post_init__(self) -> None:
        if self.sizeof_hdr != HEADER_SIZE:
            raise BadSizeError(f"sizeof_hdr must be {HEADER_SIZE}, got {self.sizeof_hdr}")
        if len(self.dim) != 8:
            raise InvalidHeaderError(f"dim must have 8 entries, got {len(self.dim)}")
        rank = self.dim[0]
        if not 1 <= rank <= 7:
            raise InvalidHeaderError(f"dim[0] must be in 1..7, got {rank}")
        if any(d < 1 for d in self.dim[1 : rank + 1]):
            raise InvalidHeaderError(f"dim[1..{rank}] must be >= 1, got {list(self.dim[1 : rank + 1])}")
        if self.datatype not in DATATYPES:
            raise UnsupportedDatatypeError(
                f"datatype {self.datatype} is not one of {sorted(DATATYPES)} ({', '.join(DATATYPE_NAMES.values())})"
            )
        expected_bitpix = DATATYPES[self.datatype][1]
        if self.bitpix != expected_bitpix:
            raise InvalidHeaderError(
                f"bitpix {self.bitpix} inconsistent with datatype {self.datatype} (expected {expected_bitpix})"
            )
        if self.magic not in (MAGIC_SINGLE, MAGIC_PAIRED):
            raise BadMagicError(f"magic {self.magic!r} is neither 'n+1' nor 'ni1'")
        if self.magic == MAGIC_SINGLE and self.vox_offset < HEADER_SIZE:
            raise InvalidHeaderError(f"vox_offset {self.vox_offset} < {HEADER_SIZE} for a single-file image")
        if self.endianness not in ("<", ">"):
            raise ValidationError(f"endianness must be '<' or '>', got {self.endianness!r}")

    def _extent(self, axis: int) -> int:
        return self.dim[axis] if axis <= self.dim[0] else 1

    @property
    def nx(self) -> int:
        return self._extent(1)

    @property
    def ny(self) -> int:
        return self._extent(2)

    @property
    def nz(self) -> int:
        return self._extent(3)

    @property
    def nt(self) -> int:
        """Number of 3D volumes (product of dims 4..rank)."""
        return int(np.prod([self._extent(i) for i in range(4, 8)]))

    @property
    def is_single_file(self) -> bool:
        return self.magic == MAGIC_SINGLE

    @property
    def data_nbytes(self) -> int:
        return self.nx * self.ny * self.nz * self.nt * self.bitpix // 8


@dataclass(frozen=True, eq=False)
class Volume3D:
    """
    Voxel grid indexed [x, y, z] with shape (nx, ny, nz).

    Storage order (the NIfTI order) has x varying fastest; ``flat`` returns
    voxels in that order. The array is read-only.
    """

    voxels: np.ndarray
    source_scaling: tuple[float, float] = (1.0, 0.0)
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        arr = np.array(self.voxels, dtype=np.float64, copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValidationError(f"voxels must be a non-empty 3D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("voxels contain NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)

    @classmethod
    def from_flat(cls, nx: int, ny: int, nz: int, values: Sequence[float], **kwargs) -> "Volume3D":
        """Build from a flat sequence in storage order (x fastest)."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != nx * ny * nz:
            raise ValidationError(f"expected {nx * ny * nz} voxels, got {arr.size}")
        return cls(arr.reshape((nx, ny, nz), order="F"), **kwargs)

    @property
    def nx(self) -> int:
        return self.voxels.shape[0]

    @property
    def ny(self) -> int:
        return self.voxels.shape[1]

    @property
    def nz(self) -> int:
        return self.voxels.shape[2]

    @property
    def flat(self) -> np.ndarray:
        return self.voxels.ravel(order="F")


def _read_all(source: ByteSource) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        return pathlib.Path(source).read_bytes()
    return source.read()


def _detect_endianness(raw: bytes) -> str:
    if np.frombuffer(raw, dtype="<i4", count=1)[0] == HEADER_SIZE:
        return "<"
    if np.frombuffer(raw, dtype=">i4", count=1)[0] == HEADER_SIZE:
        return ">"
    raise BadSizeError(
        f"sizeof_hdr is neither {HEADER_SIZE} nor its byte swap "
        f"(read {int(np.frombuffer(raw, dtype='<i4', count=1)[0])})"
    )


def parse_nifti_header(data: bytes) -> NiftiHeader:
    """
    Parse the first 348 bytes of a NIfTI-1 stream.

    Byte order is detected from sizeof_hdr; every multi-byte field is read
    in that order and the result is recorded as ``endianness``.
    """
    data = bytes(data[: SINGLE_FILE_OFFSET]) if len(data) > SINGLE_FILE_OFFSET else bytes(data)
    if data[:2] == _GZIP_MAGIC:
        raise CompressedInputError("gzip-compressed input (.nii.gz) is not supported; decompress it first")
    if len(data) < HEADER_SIZE:
        raise TooShortError(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    endianness = _detect_endianness(data)
    rec = np.frombuffer(data, dtype=HEADER_DTYPE.newbyteorder(endianness), count=1)[0]
    magic = bytes(rec["magic"]).rstrip(b"\x00")
    if magic not in (MAGIC_SINGLE, MAGIC_PAIRED):
        raise BadMagicError(f"magic {magic!r} is neither 'n+1' nor 'ni1'")
    datatype = int(rec["datatype"])
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(
            f"datatype {datatype} is not one of {sorted(DATATYPES)} ({', '.join(DATATYPE_NAMES.values())})"
        )
    return NiftiHeader(
        sizeof_hdr=int(rec["sizeof_hdr"]),
        dim=tuple(int(d) for d in rec["dim"]),
        datatype=datatype,
        bitpix=int(rec["bitpix"]),
        vox_offset=float(rec["vox_offset"]),
        scl_slope=float(rec["scl_slope"]),
        scl_inter=float(rec["scl_inter"]),
        magic=magic,
        endianness=endianness,
        pixdim=tuple(float(p) for p in rec["pixdim"]),
        qform_code=int(rec["qform_code"]),
        sform_code=int(rec["sform_code"]),
        descrip=bytes(rec["descrip"]).rstrip(b"\x00").decode("latin-1"),
    )


def load_volumes(source: ByteSource, name: str = "") -> list[Volume3D]:
    """Load every 3D volume of a single-file NIfTI-1 image (one per time point)."""
    data = _read_all(source)
    header = parse_nifti_header(data)
    if not header.is_single_file:
        raise NiftiError("paired .hdr/.img images ('ni1') are not supported; use single-file .nii")
    offset = int(header.vox_offset)
    needed = offset + header.data_nbytes
    if len(data) < needed:
        raise TruncatedDataError(f"expected at least {needed} bytes, got {len(data)}")

    dtype = DATATYPES[header.datatype][0].newbyteorder(header.endianness)
    n3 = header.nx * header.ny * header.nz
    raw = np.frombuffer(data, dtype=dtype, count=n3 * header.nt, offset=offset).astype(np.float64)
    slope, inter = header.scl_slope, header.scl_inter
    if slope != 0.0 and np.isfinite(slope) and np.isfinite(inter):
        raw = raw * slope + inter
        scaling = (slope, inter)
    else:
        scaling = (1.0, 0.0)
    if not np.all(np.isfinite(raw)):
        raise NiftiError("voxel data contains NaN or Inf after scaling")

    volumes = []
    for t in range(header.nt):
        block = raw[t * n3 : (t + 1) * n3]
        vol_name = name if header.nt == 1 else f"{name}_t{t}"
        volumes.append(Volume3D.from_flat(header.nx, header.ny, header.nz, block,
                                          source_scaling=scaling, name=vol_name))
    logger.debug("Loaded %d volume(s) %dx%dx%d (%s, %s-endian)",
                 header.nt, header.nx, header.ny, header.nz,
                 DATATYPE_NAMES[header.datatype], "little" if header.endianness == "<" else "big")
    return volumes


def load_volume(source: ByteSource, name: str = "") -> Union[Volume3D, list[Volume3D]]:
    """
    Load a single-file NIfTI-1 image.

    Returns one Volume3D for a 3D image and a list (one per time point) when
    dim[0] >= 4.
    """
    data = _read_all(source)
    volumes = load_volumes(data, name=name)
    if parse_nifti_header(data).dim[0] >= 4:
        return volumes
    return volumes[0]


def make_header(shape: Sequence[int], datatype: int, endianness: str = "<",
                scl_slope: float = 1.0, scl_inter: float = 0.0, descrip: str = "") -> NiftiHeader:
    """Header for a single-file image of ``shape`` (3 or 4 dims)."""
    if datatype not in DATATYPES:
        raise UnsupportedDatatypeError(f"datatype {datatype} is not one of {sorted(DATATYPES)}")
    dims = [len(shape), *shape]
    dims += [1] * (8 - len(dims))
    return NiftiHeader(
        sizeof_hdr=HEADER_SIZE,
        dim=tuple(int(d) for d in dims),
        datatype=datatype,
        bitpix=DATATYPES[datatype][1],
        vox_offset=float(SINGLE_FILE_OFFSET),
        scl_slope=scl_slope,
        scl_inter=scl_inter,
        magic=MAGIC_SINGLE,
        endianness=endianness,
        descrip=descrip,
    )


def header_to_bytes(header: NiftiHeader) -> bytes:
    rec = np.zeros(1, dtype=HEADER_DTYPE.newbyteorder(header.endianness))
    rec["sizeof_hdr"] = header.sizeof_hdr
    rec["dim"] = header.dim
    rec["datatype"] = header.datatype
    rec["bitpix"] = header.bitpix
    rec["pixdim"] = header.pixdim
    rec["vox_offset"] = header.vox_offset
    rec["scl_slope"] = header.scl_slope
    rec["scl_inter"] = header.scl_inter
    rec["qform_code"] = header.qform_code
    rec["sform_code"] = header.sform_code
    rec["descrip"] = header.descrip.encode("latin-1")[:80]
    rec["magic"] = header.magic
    return rec.tobytes()


def _encode_voxels(values: np.ndarray, datatype: int, endianness: str) -> bytes:
    dtype = DATATYPES[datatype][0]
    if dtype.kind in "iu":
        rounded = np.rint(values)
        info = np.iinfo(dtype)
        bad = (rounded < info.min) | (rounded > info.max)
        if np.any(bad):
            first = float(values[np.argmax(bad)])
            raise ValueOverflowError(
                f"voxel value {first} outside {DATATYPE_NAMES[datatype]} range [{info.min}, {info.max}]"
            )
        values = rounded
    elif dtype == np.float32:
        info = np.finfo(np.float32)
        if np.any(np.abs(values) > info.max):
            raise ValueOverflowError("voxel value outside f32 range")
    return values.astype(dtype.newbyteorder(endianness)).tobytes()


def write_nifti(vol: Union[Volume3D, Sequence[Volume3D]], datatype: int = 16,
                endianness: str = "<") -> bytes:
    """
    Serialize one volume (or a same-shape series, written as 4D) to
    single-file NIfTI-1 bytes. Integer datatypes round to nearest and
    reject values outside their range.
    """
    volumes = [vol] if isinstance(vol, Volume3D) else list(vol)
    if not volumes:
        raise ValidationError("write_nifti needs at least one volume")
    shape = volumes[0].voxels.shape
    if any(v.voxels.shape != shape for v in volumes):
        raise ValidationError("all volumes of a 4D series must share one shape")
    dims = list(shape) if len(volumes) == 1 else [*shape, len(volumes)]
    header = make_header(dims, datatype, endianness=endianness)
    flat = np.concatenate([v.flat for v in volumes])
    payload = _encode_voxels(flat, datatype, endianness)
    return header_to_bytes(header) + b"\x00" * (SINGLE_FILE_OFFSET - HEADER_SIZE) + payload


def swap_byte_order(data: bytes) -> bytes:
    """Re-encode a parsed single-file image in the opposite byte order."""
    header = parse_nifti_header(data)
    other = ">" if header.endianness == "<" else "<"
    dtype = DATATYPES[header.datatype][0]
    offset = int(header.vox_offset)
    count = header.data_nbytes // dtype.itemsize
    voxels = np.frombuffer(data, dtype=dtype.newbyteorder(header.endianness), count=count, offset=offset)
    rec = np.frombuffer(data[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(header.endianness), count=1)
    swapped_header = rec.astype(HEADER_DTYPE.newbyteorder(other)).tobytes()
    return (swapped_header + data[HEADER_SIZE:offset]
            + voxels.astype(dtype.newbyteorder(other)).tobytes() + data[offset + header.data_nbytes:])
