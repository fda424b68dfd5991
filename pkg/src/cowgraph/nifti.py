"""Minimal NIfTI-1 reader/writer for uncompressed single-file volumes.

Only the subset needed for mask and skeleton volumes is supported: 348-byte
little-endian headers with magic ``n+1``, 3D images, and datatypes uint8 /
int16 / float32 / uint16.  Gzipped files must be decompressed upstream.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .volume import Volume

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4-byte extension indicator

DTYPE_TO_CODE = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.float32): 16,
    np.dtype(np.uint16): 512,
}
CODE_TO_DTYPE = {v: k for k, v in DTYPE_TO_CODE.items()}

# (struct format, name, byte offset) for the fields we read or write.
_HDR = struct.Struct(
    "<i"  # sizeof_hdr
    "10s18sih2B"  # data_type, db_name, extents, session_error, regular, dim_info
    "8h"  # dim
    "3f h h h h"  # intent_p1-3, intent_code, datatype, bitpix, slice_start
    "8f"  # pixdim
    "f f f h 2B"  # vox_offset, scl_slope, scl_inter, slice_end, slice_code, xyzt_units
    "3f f i i"  # cal_max, cal_min, slice_duration, toffset, glmax, glmin
    "80s24s"  # descrip, aux_file
    "2h"  # qform_code, sform_code
    "6f"  # quatern_b/c/d, qoffset_x/y/z
    "4f4f4f"  # srow_x, srow_y, srow_z
    "16s4s"  # intent_name, magic
)
assert _HDR.size == HEADER_SIZE


class NiftiParseError(ValueError):
    """Raised when the byte stream is not a supported NIfTI-1 volume."""


def _quaternion_rotation(b: float, c: float, d: float, qfac: float) -> np.ndarray:
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a_sq, 0.0))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    rot[:, 2] *= qfac
    return rot


def parse_nifti(data: bytes) -> Volume:
    """Decode an uncompressed single-file NIfTI-1 byte sequence."""
    if len(data) < HEADER_SIZE:
        raise NiftiParseError(f"sizeof_hdr: stream holds {len(data)} bytes, need {HEADER_SIZE}")
    fields = _HDR.unpack_from(data)
    sizeof_hdr = fields[0]
    dim = fields[7:15]
    datatype = fields[19]
    pixdim = fields[22:30]
    vox_offset = fields[30]
    qform_code, sform_code = fields[44], fields[45]
    quatern = fields[46:49]
    qoffset = fields[49:52]
    srow = np.array(fields[52:64], dtype=np.float64).reshape(3, 4)
    magic = fields[65]

    if sizeof_hdr != HEADER_SIZE:
        raise NiftiParseError(f"sizeof_hdr: expected {HEADER_SIZE}, got {sizeof_hdr}")
    if magic[:3] == b"ni1":
        raise NiftiParseError("magic: unsupported magic 'ni1' (two-file NIfTI)")
    if magic[:3] != b"n+1":
        raise NiftiParseError(f"magic: bad magic {magic!r}")
    if dim[0] != 3:
        raise NiftiParseError(f"dim: expected 3 dimensions, got dim[0]={dim[0]}")
    dims = tuple(int(d) for d in dim[1:4])
    if min(dims) < 1:
        raise NiftiParseError(f"dim: non-positive extent in {dims}")
    if datatype not in CODE_TO_DTYPE:
        raise NiftiParseError(f"datatype: unsupported datatype code {datatype}")
    dtype = CODE_TO_DTYPE[datatype]

    spacing = tuple(abs(float(p)) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise NiftiParseError(f"pixdim: non-positive spacing {spacing}")

    offset = int(vox_offset)
    nbytes = int(np.prod(dims)) * dtype.itemsize
    if offset < VOX_OFFSET or offset + nbytes > len(data):
        raise NiftiParseError(
            f"vox_offset: inconsistent offset {vox_offset} for {nbytes} data bytes "
            f"in a {len(data)}-byte stream"
        )

    if sform_code > 0:
        scales = np.linalg.norm(srow[:, :3], axis=0)
        if np.any(scales <= 0):
            raise NiftiParseError("srow: degenerate sform column")
        orientation = srow[:, :3] / scales
        origin = tuple(srow[:, 3])
    elif qform_code > 0:
        qfac = float(pixdim[0]) if pixdim[0] in (-1.0, 1.0) else 1.0
        orientation = _quaternion_rotation(*quatern, qfac)
        origin = tuple(float(q) for q in qoffset)
    else:
        orientation = np.eye(3)
        origin = (0.0, 0.0, 0.0)

    raw = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=offset)
    voxels = raw.reshape(dims, order="F")
    return Volume(voxels, spacing, origin, orientation)


def write_nifti(volume: Volume) -> bytes:
    """Encode a volume as an uncompressed single-file NIfTI-1 byte sequence."""
    dtype = volume.data.dtype
    if dtype not in DTYPE_TO_CODE:
        raise NiftiParseError(f"datatype: unsupported element kind {dtype}")
    dims = volume.dims
    spacing = volume.spacing

    srow = volume.orientation * np.asarray(spacing)
    header = _HDR.pack(
        HEADER_SIZE,
        b"", b"", 0, 0, 0, 0,
        3, dims[0], dims[1], dims[2], 1, 1, 1, 1,
        0.0, 0.0, 0.0, 0,
        DTYPE_TO_CODE[dtype], dtype.itemsize * 8, 0,
        1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0,
        float(VOX_OFFSET), 1.0, 0.0, 0, 0, 2,
        0.0, 0.0, 0.0, 0.0, 0, 0,
        b"cowgraph", b"",
        0, 1,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        srow[0, 0], srow[0, 1], srow[0, 2], volume.origin[0],
        srow[1, 0], srow[1, 1], srow[1, 2], volume.origin[1],
        srow[2, 0], srow[2, 1], srow[2, 2], volume.origin[2],
        b"", b"n+1\x00",
    )
    payload = np.asfortranarray(volume.data).tobytes(order="F")
    return header + b"\x00\x00\x00\x00" + payload


def read_nifti_file(path: str | Path) -> Volume:
    return parse_nifti(Path(path).read_bytes())


def write_nifti_file(volume: Volume, path: str | Path) -> None:
    Path(path).write_bytes(write_nifti(volume))
