import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowgraph.nifti import (
    HEADER_SIZE,
    VOX_OFFSET,
    NiftiParseError,
    parse_nifti,
    write_nifti,
)
from cowgraph.volume import Volume


def minimal_header(dims=(4, 4, 4), datatype=2, pixdim=(0.6, 0.6, 0.6), magic=b"n+1\x00",
                   sform_code=1, vox_offset=float(VOX_OFFSET)):
    """Hand-rolled header independent of the writer, identity sform."""
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *dims, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, vox_offset)
    struct.pack_into("<h", hdr, 254, sform_code)
    struct.pack_into("<4f", hdr, 280, pixdim[0], 0, 0, 0)
    struct.pack_into("<4f", hdr, 296, 0, pixdim[1], 0, 0)
    struct.pack_into("<4f", hdr, 312, 0, 0, pixdim[2], 0)
    struct.pack_into("<4s", hdr, 344, magic)
    return bytes(hdr)


DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32, 512: np.uint16}


def payload_for(dims, datatype, seed=0):
    rng = np.random.default_rng(seed)
    n = int(np.prod(dims))
    if datatype == 16:
        arr = rng.random(n).astype(np.float32)
    else:
        arr = rng.integers(0, 100, size=n).astype(DTYPES[datatype])
    return arr.tobytes()


class TestParse:
    def test_minimal_header(self):
        raw = minimal_header() + b"\x00" * 4 + payload_for((4, 4, 4), 2)
        vol = parse_nifti(raw)
        assert vol.dims == (4, 4, 4)
        assert vol.spacing == pytest.approx((0.6, 0.6, 0.6))
        assert vol.data.dtype == np.uint8
        assert np.allclose(vol.orientation, np.eye(3))

    def test_two_file_magic_rejected(self):
        raw = minimal_header(magic=b"ni1\x00") + b"\x00" * 4 + payload_for((4, 4, 4), 2)
        with pytest.raises(NiftiParseError, match="unsupported magic"):
            parse_nifti(raw)

    def test_bad_magic_rejected(self):
        raw = minimal_header(magic=b"abcd") + b"\x00" * 4 + payload_for((4, 4, 4), 2)
        with pytest.raises(NiftiParseError, match="magic"):
            parse_nifti(raw)

    def test_wrong_dim_count(self):
        hdr = bytearray(minimal_header())
        struct.pack_into("<h", hdr, 40, 4)
        with pytest.raises(NiftiParseError, match="dim"):
            parse_nifti(bytes(hdr) + b"\x00" * 4 + payload_for((4, 4, 4), 2))

    def test_unsupported_datatype(self):
        raw = minimal_header(datatype=64) + b"\x00" * 4 + payload_for((4, 4, 4), 2)
        with pytest.raises(NiftiParseError, match="datatype"):
            parse_nifti(raw)

    def test_inconsistent_vox_offset(self):
        raw = minimal_header(vox_offset=100.0) + b"\x00" * 4 + payload_for((4, 4, 4), 2)
        with pytest.raises(NiftiParseError, match="vox_offset"):
            parse_nifti(raw)

    def test_truncated_payload(self):
        raw = minimal_header() + b"\x00" * 4 + payload_for((4, 4, 4), 2)[:-8]
        with pytest.raises(NiftiParseError, match="vox_offset"):
            parse_nifti(raw)

    def test_data_is_x_fastest(self):
        dims = (2, 3, 4)
        arr = np.arange(24, dtype=np.uint8)
        raw = minimal_header(dims=dims) + b"\x00" * 4 + arr.tobytes()
        vol = parse_nifti(raw)
        # first stored value varies fastest along x
        assert vol.data[0, 0, 0] == 0
        assert vol.data[1, 0, 0] == 1
        assert vol.data[0, 1, 0] == 2

    def test_qform_fallback(self):
        hdr = bytearray(minimal_header(sform_code=0))
        struct.pack_into("<h", hdr, 252, 1)  # qform_code
        # quaternion for a 90 degree rotation about z: (a, b, c, d) = (cos45, 0, 0, sin45)
        struct.pack_into("<3f", hdr, 256, 0.0, 0.0, np.sin(np.pi / 4))
        struct.pack_into("<3f", hdr, 268, 5.0, 6.0, 7.0)
        vol = parse_nifti(bytes(hdr) + b"\x00" * 4 + payload_for((4, 4, 4), 2))
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(vol.orientation, expected, atol=1e-6)
        assert vol.origin == pytest.approx((5.0, 6.0, 7.0))

    def test_no_form_defaults_to_identity(self):
        raw = minimal_header(sform_code=0) + b"\x00" * 4 + payload_for((4, 4, 4), 2)
        vol = parse_nifti(raw)
        assert np.allclose(vol.orientation, np.eye(3))
        assert vol.origin == (0.0, 0.0, 0.0)


class TestWrite:
    def test_layout_of_tiny_volume(self):
        vol = Volume(np.full((1, 1, 1), 7, dtype=np.uint8), (1.0, 1.0, 1.0))
        raw = write_nifti(vol)
        assert len(raw) == HEADER_SIZE + 4 + 1
        assert raw[VOX_OFFSET] == 7
        assert raw[344:347] == b"n+1"

    def test_float32_datatype_code(self):
        vol = Volume(np.zeros((2, 2, 2), dtype=np.float32), (1.0, 1.0, 1.0))
        raw = write_nifti(vol)
        (dt,) = struct.unpack_from("<h", raw, 70)
        assert dt == 16

    def test_round_trip_bytes_on_canonical_fixture(self):
        rng = np.random.default_rng(42)
        vol = Volume(
            rng.integers(0, 12, size=(5, 6, 7)).astype(np.uint8),
            (0.25, 0.25, 0.25),
            (1.5, -2.0, 3.25),
        )
        fixture = write_nifti(vol)
        assert write_nifti(parse_nifti(fixture)) == fixture

    @given(st.sampled_from([2, 4, 16, 512]), st.integers(0, 50))
    @settings(max_examples=30, deadline=None)
    def test_parse_write_identity(self, datatype, seed):
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in rng.integers(1, 6, size=3))
        dtype = DTYPES[datatype]
        if datatype == 16:
            data = rng.random(dims).astype(dtype)
        else:
            data = rng.integers(0, 50, size=dims).astype(dtype)
        vol = Volume(data, tuple(rng.uniform(0.2, 2.0, 3)), tuple(rng.uniform(-9, 9, 3)))
        assert parse_nifti(write_nifti(vol)) == vol

    def test_round_trip_with_rotation(self):
        rot = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=float)
        vol = Volume(np.ones((3, 2, 4), dtype=np.int16), (0.5, 0.7, 0.9), (1, 2, 3), rot)
        assert parse_nifti(write_nifti(vol)) == vol
