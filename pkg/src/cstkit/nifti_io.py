"""NIfTI-1 reader and writer for 3-D volumes.

Implements the single-file (.nii / .nii.gz, magic "n+1\\0") and header/image
pair (.hdr + .img, magic "ni1\\0") flavours of the 348-byte NIfTI-1 format.
Gzip compression is detected from the 0x1f 0x8b magic bytes, not the file
extension, and both byte orders are accepted (resolved from sizeof_hdr).

Only what this toolkit needs is supported: 3-D volumes (a trailing
singleton time axis is tolerated) in uint8, int16, int32, float32 or
float64. NIfTI-2, DICOM, extensions and resampling are out of scope;
unsupported inputs are rejected with a specific error rather than guessed
at.
"""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    IoFailure,
    MalformedHeader,
    NonFiniteValues,
    TruncatedData,
    UnsupportedDatatype,
    UnsupportedDimensionality,
    ValueOutOfRange,
)
from .grid import VolumeHeader, diagonal_affine
from .mask_core import MaskVolume

HEADER_SIZE = 348
# Written files carry no extensions: 4 zero bytes after the header, data at 352.
WRITE_VOX_OFFSET = 352

DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8
DT_FLOAT32 = 16
DT_FLOAT64 = 64

# code -> (numpy dtype charcode, bitpix)
_DTYPES = {
    DT_UINT8: ("u1", 8),
    DT_INT16: ("i2", 16),
    DT_INT32: ("i4", 32),
    DT_FLOAT32: ("f4", 32),
    DT_FLOAT64: ("f8", 64),
}

_DTYPE_NAMES = {
    "uint8": DT_UINT8,
    "int16": DT_INT16,
    "int32": DT_INT32,
    "float32": DT_FLOAT32,
    "float64": DT_FLOAT64,
}

# Flat NIfTI-1 header layout; offsets are fixed by the format.
_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),      # 0   must be 348
    ("data_type", "S10"),      # 4   unused
    ("db_name", "S18"),        # 14  unused
    ("extents", "i4"),         # 32  unused
    ("session_error", "i2"),   # 36  unused
    ("regular", "S1"),         # 38  unused
    ("dim_info", "u1"),        # 39
    ("dim", "i2", (8,)),       # 40
    ("intent_p1", "f4"),       # 56
    ("intent_p2", "f4"),       # 60
    ("intent_p3", "f4"),       # 64
    ("intent_code", "i2"),     # 68
    ("datatype", "i2"),        # 70
    ("bitpix", "i2"),          # 72
    ("slice_start", "i2"),     # 74
    ("pixdim", "f4", (8,)),    # 76  pixdim[0] is the qform handedness factor
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
    ("glmax", "i4"),           # 140  unused
    ("glmin", "i4"),           # 144  unused
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
    ("magic", "S4"),           # 344  "n+1\0" or "ni1\0"
]

_HDR_LE = np.dtype(_HEADER_FIELDS).newbyteorder("<")
_HDR_BE = _HDR_LE.newbyteorder(">")
assert _HDR_LE.itemsize == HEADER_SIZE

_GZIP_MAGIC = b"\x1f\x8b"
_MAGIC_SINGLE = b"n+1"
_MAGIC_PAIR = b"ni1"


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """A 3-D real-valued volume with scaling already applied.

    values has shape header.dims and is indexed [x, y, z]; the on-disk
    layout is x-fastest, matching a Fortran-order ravel of this array.
    """

    header: VolumeHeader
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != self.header.dims:
            raise ValueError(
                f"voxel array shape {values.shape} != header dims {self.header.dims}")
        if not np.isfinite(values).all():
            raise NonFiniteValues("volume contains NaN or infinite voxel values")
        values = values.copy() if values.flags.writeable else values
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def _decompress_if_gzip(raw: bytes, path: Path) -> bytes:
    if raw[:2] == _GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IoFailure(f"{path}: corrupt gzip stream: {exc}") from exc
    return raw


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return _decompress_if_gzip(raw, path)


def _parse_header(buf: bytes, path: Path) -> np.void:
    if len(buf) < HEADER_SIZE:
        raise MalformedHeader(f"{path}: file shorter than a NIfTI-1 header")
    size_le = int(np.frombuffer(buf, "<i4", count=1)[0])
    size_be = int(np.frombuffer(buf, ">i4", count=1)[0])
    if size_le == HEADER_SIZE:
        dtype = _HDR_LE
    elif size_be == HEADER_SIZE:
        dtype = _HDR_BE
    elif 540 in (size_le, size_be):
        raise MalformedHeader(f"{path}: NIfTI-2 is not supported, convert to NIfTI-1")
    else:
        raise MalformedHeader(
            f"{path}: sizeof_hdr is {size_le} (byte-swapped {size_be}), expected 348")
    hdr = np.frombuffer(buf[:HEADER_SIZE], dtype=dtype, count=1)[0]
    magic = bytes(hdr["magic"])[:3]
    if magic not in (_MAGIC_SINGLE, _MAGIC_PAIR):
        raise MalformedHeader(f"{path}: bad magic {bytes(hdr['magic'])!r}")
    return hdr


def _checked_dims(hdr: np.void, path: Path) -> tuple[int, int, int]:
    ndim = int(hdr["dim"][0])
    if ndim == 4 and int(hdr["dim"][4]) != 1:
        raise UnsupportedDimensionality(
            f"{path}: 4-D volume with {int(hdr['dim'][4])} time points; only 3-D supported")
    if ndim not in (3, 4):
        raise UnsupportedDimensionality(f"{path}: {ndim}-D volume; only 3-D supported")
    dims = tuple(int(d) for d in hdr["dim"][1:4])
    if any(d < 1 for d in dims):
        raise MalformedHeader(f"{path}: non-positive dimension in {dims}")
    return dims


def _affine_from_header(hdr: np.void, voxel_size) -> np.ndarray:
    # Precedence: sform when set, else qform, else scaled identity.
    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0, :] = np.asarray(hdr["srow_x"], dtype=np.float64)
        affine[1, :] = np.asarray(hdr["srow_y"], dtype=np.float64)
        affine[2, :] = np.asarray(hdr["srow_z"], dtype=np.float64)
        return affine
    if int(hdr["qform_code"]) > 0:
        return _affine_from_quaternion(hdr, voxel_size)
    return diagonal_affine(voxel_size)


def _affine_from_quaternion(hdr: np.void, voxel_size) -> np.ndarray:
    b = float(hdr["quatern_b"])
    c = float(hdr["quatern_c"])
    d = float(hdr["quatern_d"])
    a = math.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    qfac = -1.0 if float(hdr["pixdim"][0]) < 0 else 1.0
    vx, vy, vz = voxel_size
    affine = np.eye(4)
    affine[:3, 0] = rot[:, 0] * vx
    affine[:3, 1] = rot[:, 1] * vy
    affine[:3, 2] = rot[:, 2] * vz * qfac
    affine[:3, 3] = [float(hdr["qoffset_x"]), float(hdr["qoffset_y"]),
                     float(hdr["qoffset_z"])]
    return affine


def _data_buffer(path: Path, buf: bytes, hdr: np.void) -> tuple[bytes, int]:
    """Locate the voxel payload; returns (buffer, byte offset into it)."""
    magic = bytes(hdr["magic"])[:3]
    offset = int(hdr["vox_offset"])
    if magic == _MAGIC_SINGLE:
        if offset < HEADER_SIZE:
            raise MalformedHeader(f"{path}: vox_offset {offset} inside the header")
        return buf, offset
    # Header/image pair: payload lives in the sibling .img file.
    stem = path.name
    for suffix in (".hdr.gz", ".nii.gz", ".hdr", ".nii"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    for candidate in (path.with_name(stem + ".img"), path.with_name(stem + ".img.gz")):
        if candidate.exists():
            return _read_bytes(candidate), max(offset, 0)
    raise IoFailure(f"{path}: companion .img file not found for pair-format header")


def read_volume(path) -> ScalarVolume:
    """Read a NIfTI-1 volume, applying value scaling.

    Raises MalformedHeader, UnsupportedDatatype, UnsupportedDimensionality,
    TruncatedData, NonFiniteValues or IoFailure.
    """
    path = Path(path)
    buf = _read_bytes(path)
    hdr = _parse_header(buf, path)

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedDatatype(
            f"{path}: datatype code {code}; supported: {sorted(_DTYPES)}")
    charcode, bitpix = _DTYPES[code]
    if int(hdr["bitpix"]) != bitpix:
        raise MalformedHeader(
            f"{path}: bitpix {int(hdr['bitpix'])} inconsistent with datatype {code}")

    dims = _checked_dims(hdr, path)
    pixdim = np.asarray(hdr["pixdim"], dtype=np.float64)
    voxel_size = tuple(pixdim[1:4])
    if any(not np.isfinite(v) or v <= 0 for v in voxel_size):
        raise MalformedHeader(f"{path}: non-positive pixdim {voxel_size}")

    data_buf, offset = _data_buffer(path, buf, hdr)
    n_vox = dims[0] * dims[1] * dims[2]
    need = n_vox * (bitpix // 8)
    if len(data_buf) - offset < need:
        raise TruncatedData(
            f"{path}: need {need} data bytes, found {max(0, len(data_buf) - offset)}")
    byteorder = "<" if hdr.dtype == _HDR_LE else ">"
    raw = np.frombuffer(data_buf, dtype=byteorder + charcode, count=n_vox, offset=offset)
    values = raw.reshape(dims, order="F").astype(np.float64)

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope == 0.0 or not math.isfinite(slope):
        slope = 1.0
    if not math.isfinite(inter):
        inter = 0.0
    if (slope, inter) != (1.0, 0.0):
        values = values * slope + inter

    if not np.isfinite(values).all():
        raise NonFiniteValues(f"{path}: volume contains NaN or infinite values")

    header = VolumeHeader(
        dims=dims,
        voxel_size=voxel_size,
        affine=_affine_from_header(hdr, voxel_size),
        datatype_code=code,
        scale_slope=slope,
        scale_intercept=inter,
    )
    return ScalarVolume(header, values)


def _resolve_datatype(datatype) -> int:
    if isinstance(datatype, str):
        try:
            return _DTYPE_NAMES[datatype]
        except KeyError:
            raise UnsupportedDatatype(
                f"unknown datatype {datatype!r}; supported: {sorted(_DTYPE_NAMES)}") from None
    code = int(datatype)
    if code not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {code}; supported: {sorted(_DTYPES)}")
    return code


def _encode_values(values: np.ndarray, code: int) -> np.ndarray:
    charcode, _ = _DTYPES[code]
    target = np.dtype("<" + charcode)
    if target.kind in "ui":
        rounded = np.rint(values)
        if not np.array_equal(rounded, values):
            raise ValueOutOfRange(f"non-integral values cannot be stored as {target.name}")
        info = np.iinfo(target)
        if values.min() < info.min or values.max() > info.max:
            raise ValueOutOfRange(
                f"values span [{values.min()}, {values.max()}], "
                f"outside {target.name} range [{info.min}, {info.max}]")
        return rounded.astype(target)
    if code == DT_FLOAT32 and values.size:
        fmax = float(np.finfo(np.float32).max)
        if np.abs(values).max() > fmax:
            raise ValueOutOfRange("value magnitude exceeds float32 range")
    return values.astype(target)


def write_volume(vol: ScalarVolume, path, datatype=None) -> None:
    """Write a volume as single-file NIfTI-1 (gzipped when path ends in .gz).

    The produced file reads back to an equal volume: exactly for integer
    datatypes, to float precision of the stored type otherwise. Values are
    stored unscaled (slope 1, intercept 0).
    """
    path = Path(path)
    code = _resolve_datatype(vol.header.datatype_code if datatype is None else datatype)
    payload = _encode_values(vol.values, code)

    hdr = np.zeros((), dtype=_HDR_LE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = 3
    dim[1:4] = vol.header.dims
    hdr["dim"] = dim
    hdr["datatype"] = code
    hdr["bitpix"] = _DTYPES[code][1]
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = vol.header.voxel_size
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = WRITE_VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # millimetres
    hdr["sform_code"] = 1
    hdr["qform_code"] = 0
    hdr["srow_x"] = vol.header.affine[0].astype(np.float32)
    hdr["srow_y"] = vol.header.affine[1].astype(np.float32)
    hdr["srow_z"] = vol.header.affine[2].astype(np.float32)
    hdr["magic"] = _MAGIC_SINGLE + b"\x00"

    blob = hdr.tobytes() + b"\x00\x00\x00\x00" + payload.ravel(order="F").tobytes()
    try:
        if path.suffix == ".gz":
            # mtime pinned to 0 and no embedded name, so outputs are
            # byte-reproducible across runs.
            with open(path, "wb") as fh:
                with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                    gz.write(blob)
        else:
            path.write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_mask(mask: MaskVolume, path) -> None:
    """Write a binary mask as uint8 NIfTI-1."""
    vol = ScalarVolume(mask.header.with_datatype(DT_UINT8),
                       mask.bits.astype(np.float64))
    write_volume(vol, path, DT_UINT8)


def binarize(vol: ScalarVolume, threshold: float) -> MaskVolume:
    """Mask of voxels with scaled value strictly greater than threshold."""
    threshold = float(threshold)
    if not math.isfinite(threshold):
        raise ValueError("binarize threshold must be finite")
    return MaskVolume(vol.header, vol.values > threshold)


def range_fraction_threshold(vol: ScalarVolume, fraction: float = 0.5) -> float:
    """Absolute binarization level at a fraction of the volume's value range.

    The default fraction 0.5 is the range midpoint, which equals an absolute
    0.5 for probability-like maps in [0, 1] and for 0/1 masks. A constant
    volume has no range; 0 is returned so that nonzero constants binarize to
    a full mask and all-zero volumes to an empty one.
    """
    fraction = float(fraction)
    if not math.isfinite(fraction):
        raise ValueError("threshold fraction must be finite")
    vmin = float(vol.values.min())
    vmax = float(vol.values.max())
    if vmax == vmin:
        return 0.0
    return vmin + fraction * (vmax - vmin)


def read_mask(path, threshold_fraction: float = 0.5) -> MaskVolume:
    """Read a volume and binarize it at a fraction of its value range."""
    vol = read_volume(path)
    return binarize(vol, range_fraction_threshold(vol, threshold_fraction))
