import gzip
import struct

import numpy as np
import pytest

from cstkit.errors import (
    IoFailure,
    MalformedHeader,
    NonFiniteValues,
    TruncatedData,
    UnsupportedDatatype,
    UnsupportedDimensionality,
    ValueOutOfRange,
)
from cstkit.grid import VolumeHeader, diagonal_affine
from cstkit.nifti_io import (
    DT_FLOAT32,
    DT_FLOAT64,
    DT_INT16,
    DT_INT32,
    DT_UINT8,
    ScalarVolume,
    binarize,
    range_fraction_threshold,
    read_volume,
    write_volume,
)

from helpers import build_nifti_bytes

ALL_CODES = (DT_UINT8, DT_INT16, DT_INT32, DT_FLOAT32, DT_FLOAT64)


def make_volume(values, voxel_size=(1.0, 1.0, 1.0), affine=None, code=DT_FLOAT64):
    values = np.asarray(values, dtype=np.float64)
    if affine is None:
        affine = diagonal_affine(voxel_size)
    return ScalarVolume(VolumeHeader(values.shape, voxel_size, affine, code), values)


def random_values(rng, shape, code):
    if code == DT_UINT8:
        return rng.integers(0, 256, size=shape).astype(np.float64)
    if code == DT_INT16:
        return rng.integers(-(2 ** 15), 2 ** 15, size=shape).astype(np.float64)
    if code == DT_INT32:
        return rng.integers(-(2 ** 31), 2 ** 31, size=shape).astype(np.float64)
    values = rng.normal(0.0, 100.0, size=shape)
    if code == DT_FLOAT32:
        values = values.astype(np.float32).astype(np.float64)
    return values


class TestRoundTrip:
    @pytest.mark.parametrize("code", ALL_CODES)
    def test_round_trip_identity(self, tmp_path, code):
        rng = np.random.default_rng(code)
        vol = make_volume(random_values(rng, (4, 4, 4), code), code=code)
        path = tmp_path / "vol.nii"
        write_volume(vol, path, code)
        back = read_volume(path)
        assert back.header.dims == vol.header.dims
        assert back.header.voxel_size == vol.header.voxel_size
        assert np.array_equal(back.values, vol.values)
        assert np.array_equal(back.header.affine, vol.header.affine)

    def test_gzip_transparent(self, tmp_path):
        rng = np.random.default_rng(1)
        vol = make_volume(random_values(rng, (5, 3, 2), DT_UINT8), code=DT_UINT8)
        write_volume(vol, tmp_path / "v.nii", DT_UINT8)
        write_volume(vol, tmp_path / "v.nii.gz", DT_UINT8)
        plain = read_volume(tmp_path / "v.nii")
        zipped = read_volume(tmp_path / "v.nii.gz")
        assert np.array_equal(plain.values, zipped.values)
        assert np.array_equal(plain.header.affine, zipped.header.affine)

    def test_gzip_detected_by_magic_not_extension(self, tmp_path):
        vol = make_volume(np.ones((2, 2, 2)), code=DT_UINT8)
        gz_named_nii = tmp_path / "misnamed.nii"
        write_volume(vol, tmp_path / "real.nii.gz", DT_UINT8)
        gz_named_nii.write_bytes((tmp_path / "real.nii.gz").read_bytes())
        assert np.array_equal(read_volume(gz_named_nii).values, vol.values)

    def test_file_size_is_352_plus_payload(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2)), code=DT_UINT8)
        path = tmp_path / "zero.nii"
        write_volume(vol, path, DT_UINT8)
        assert path.stat().st_size == 352 + 8

    def test_affine_round_trip(self, tmp_path):
        affine = np.array([[2.0, 0, 0, -10], [0, 2.0, 0, -10],
                           [0, 0, 2.0, -10], [0, 0, 0, 1.0]])
        vol = make_volume(np.zeros((3, 3, 3)), voxel_size=(2, 2, 2), affine=affine)
        write_volume(vol, tmp_path / "aff.nii", DT_UINT8)
        back = read_volume(tmp_path / "aff.nii")
        assert np.array_equal(back.header.affine, affine)

    def test_x_fastest_on_disk(self, tmp_path):
        values = np.arange(2 * 3 * 4, dtype=np.float64).reshape((2, 3, 4), order="F")
        vol = make_volume(values, code=DT_UINT8)
        path = tmp_path / "order.nii"
        write_volume(vol, path, DT_UINT8)
        payload = path.read_bytes()[352:]
        assert list(payload) == list(range(24))

    def test_vox_offset_respected(self, tmp_path):
        vol = make_volume(np.arange(8, dtype=float).reshape((2, 2, 2), order="F"))
        path = tmp_path / "offset.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<f", raw, 108, 360.0)  # push data 8 bytes further out
        path.write_bytes(bytes(raw[:352]) + b"\xff" * 8 + bytes(raw[352:]))
        assert np.array_equal(read_volume(path).values, vol.values)

    def test_float_round_trip_within_one_ulp(self, tmp_path):
        rng = np.random.default_rng(7)
        values = rng.normal(0.0, 10.0, size=(4, 4, 4))
        vol = make_volume(values)
        write_volume(vol, tmp_path / "f32.nii", DT_FLOAT32)
        back = read_volume(tmp_path / "f32.nii")
        as32 = values.astype(np.float32)
        assert np.array_equal(back.values, as32.astype(np.float64))
        ulp = np.spacing(np.abs(as32))
        assert (np.abs(back.values - values) <= ulp).all()


class TestEndianness:
    @pytest.mark.parametrize("code", ALL_CODES)
    def test_big_endian_reads_like_native(self, tmp_path, code):
        rng = np.random.default_rng(40 + code)
        values = random_values(rng, (3, 4, 2), code)
        affine = diagonal_affine((1.0, 2.0, 3.0))
        blob = build_nifti_bytes(values, (1.0, 2.0, 3.0), affine, code, byteorder=">")
        path = tmp_path / "be.nii"
        path.write_bytes(blob)
        vol = read_volume(path)
        assert np.array_equal(vol.values, values)
        assert vol.header.voxel_size == (1.0, 2.0, 3.0)
        assert np.array_equal(vol.header.affine, affine)

    def test_big_and_little_agree(self, tmp_path):
        rng = np.random.default_rng(11)
        values = random_values(rng, (4, 4, 4), DT_INT16)
        affine = diagonal_affine((1, 1, 1))
        for order, name in ((">", "be.nii"), ("<", "le.nii")):
            (tmp_path / name).write_bytes(
                build_nifti_bytes(values, (1, 1, 1), affine, DT_INT16, byteorder=order))
        be = read_volume(tmp_path / "be.nii")
        le = read_volume(tmp_path / "le.nii")
        assert np.array_equal(be.values, le.values)


class TestScalingAndAffine:
    def test_slope_intercept_applied(self, tmp_path):
        values = np.full((2, 2, 2), 3.0)
        blob = build_nifti_bytes(values, (1, 1, 1), diagonal_affine((1, 1, 1)),
                                 DT_FLOAT32, byteorder="<", scl_slope=2.0,
                                 scl_inter=1.0)
        path = tmp_path / "scaled.nii"
        path.write_bytes(blob)
        assert read_volume(path).values[0, 0, 0] == 7.0

    def test_zero_slope_treated_as_identity(self, tmp_path):
        values = np.full((2, 2, 2), 3.0)
        blob = build_nifti_bytes(values, (1, 1, 1), diagonal_affine((1, 1, 1)),
                                 DT_FLOAT32, byteorder="<", scl_slope=0.0,
                                 scl_inter=0.0)
        path = tmp_path / "noslope.nii"
        path.write_bytes(blob)
        assert read_volume(path).values[0, 0, 0] == 3.0

    def test_qform_fallback_when_no_sform(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2)), voxel_size=(2, 3, 4))
        path = tmp_path / "qform.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<h", raw, 252, 1)  # qform_code = 1
        struct.pack_into("<h", raw, 254, 0)  # sform_code = 0
        # identity quaternion, offset (5, 6, 7)
        struct.pack_into("<3f", raw, 256, 0.0, 0.0, 0.0)
        struct.pack_into("<3f", raw, 268, 5.0, 6.0, 7.0)
        path.write_bytes(bytes(raw))
        header = read_volume(path).header
        expected = np.array([[2, 0, 0, 5], [0, 3, 0, 6], [0, 0, 4, 7], [0, 0, 0, 1]],
                            dtype=np.float64)
        assert np.allclose(header.affine, expected, atol=1e-6)

    def test_pixdim_diagonal_when_no_codes(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2)), voxel_size=(2, 3, 4))
        path = tmp_path / "diag.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<h", raw, 254, 0)  # sform_code = 0
        path.write_bytes(bytes(raw))
        header = read_volume(path).header
        assert np.array_equal(header.affine, np.diag([2.0, 3.0, 4.0, 1.0]))


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_volume(tmp_path / "nope.nii")

    def test_short_file(self, tmp_path):
        path = tmp_path / "short.nii"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(MalformedHeader):
            read_volume(path)

    def test_bad_sizeof_hdr(self, tmp_path):
        path = tmp_path / "bad.nii"
        path.write_bytes(b"\x00" * 400)
        with pytest.raises(MalformedHeader, match="sizeof_hdr"):
            read_volume(path)

    def test_nifti2_rejected(self, tmp_path):
        blob = bytearray(b"\x00" * 540)
        struct.pack_into("<i", blob, 0, 540)
        path = tmp_path / "n2.nii"
        path.write_bytes(bytes(blob))
        with pytest.raises(MalformedHeader, match="NIfTI-2"):
            read_volume(path)

    def test_bad_magic(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2)))
        path = tmp_path / "magic.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        raw[344:348] = b"xxx\x00"
        path.write_bytes(bytes(raw))
        with pytest.raises(MalformedHeader, match="magic"):
            read_volume(path)

    def test_unsupported_datatype(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2)))
        path = tmp_path / "dt.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<h", raw, 70, 256)  # int8: valid NIfTI, unsupported here
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedDatatype):
            read_volume(path)

    def test_4d_with_multiple_timepoints(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2)))
        path = tmp_path / "4d.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<8h", raw, 40, 4, 2, 2, 2, 3, 1, 1, 1)
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedDimensionality):
            read_volume(path)

    def test_4d_with_singleton_time_accepted(self, tmp_path):
        vol = make_volume(np.arange(8, dtype=float).reshape((2, 2, 2), order="F"))
        path = tmp_path / "4d1.nii"
        write_volume(vol, path, DT_UINT8)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<8h", raw, 40, 4, 2, 2, 2, 1, 1, 1, 1)
        path.write_bytes(bytes(raw))
        assert np.array_equal(read_volume(path).values, vol.values)

    def test_truncated_payload(self, tmp_path):
        vol = make_volume(np.zeros((4, 4, 4)))
        path = tmp_path / "trunc.nii"
        write_volume(vol, path, DT_FLOAT64)
        data = path.read_bytes()
        path.write_bytes(data[:-17])
        with pytest.raises(TruncatedData):
            read_volume(path)

    def test_nonfinite_rejected(self, tmp_path):
        values = np.zeros((2, 2, 2))
        values[0, 0, 0] = np.nan
        blob = build_nifti_bytes(values, (1, 1, 1), diagonal_affine((1, 1, 1)),
                                 DT_FLOAT64, byteorder="<")
        path = tmp_path / "nan.nii"
        path.write_bytes(blob)
        with pytest.raises(NonFiniteValues):
            read_volume(path)

    def test_write_value_out_of_range(self, tmp_path):
        vol = make_volume(np.full((2, 2, 2), 300.0))
        with pytest.raises(ValueOutOfRange):
            write_volume(vol, tmp_path / "big.nii", DT_UINT8)

    def test_write_non_integral_as_integer(self, tmp_path):
        vol = make_volume(np.full((2, 2, 2), 0.5))
        with pytest.raises(ValueOutOfRange):
            write_volume(vol, tmp_path / "frac.nii", DT_INT16)

    def test_corrupt_gzip(self, tmp_path):
        path = tmp_path / "bad.nii.gz"
        good = gzip.compress(b"\x00" * 400)
        path.write_bytes(good[:20])
        with pytest.raises(IoFailure):
            read_volume(path)


class TestPairFormat:
    def test_hdr_img_pair(self, tmp_path):
        rng = np.random.default_rng(3)
        values = random_values(rng, (3, 3, 3), DT_UINT8)
        blob = build_nifti_bytes(values, (1, 1, 1), diagonal_affine((1, 1, 1)),
                                 DT_UINT8, byteorder="<")
        hdr = bytearray(blob[:348])
        struct.pack_into("4s", hdr, 344, b"ni1\x00")
        struct.pack_into("<f", hdr, 108, 0.0)  # data at offset 0 of .img
        (tmp_path / "pair.hdr").write_bytes(bytes(hdr))
        (tmp_path / "pair.img").write_bytes(blob[352:])
        vol = read_volume(tmp_path / "pair.hdr")
        assert np.array_equal(vol.values, values)

    def test_pair_missing_img(self, tmp_path):
        blob = build_nifti_bytes(np.zeros((2, 2, 2)), (1, 1, 1),
                                 diagonal_affine((1, 1, 1)), DT_UINT8, byteorder="<")
        hdr = bytearray(blob[:348])
        struct.pack_into("4s", hdr, 344, b"ni1\x00")
        (tmp_path / "lonely.hdr").write_bytes(bytes(hdr))
        with pytest.raises(IoFailure, match="img"):
            read_volume(tmp_path / "lonely.hdr")


class TestBinarize:
    def test_threshold_is_strict(self):
        vol = make_volume(np.array([0.0, 0.3, 0.7, 1.0]).reshape(4, 1, 1))
        mask = binarize(vol, 0.5)
        assert mask.bits.ravel(order="F").tolist() == [False, False, True, True]

    def test_negative_threshold_full_mask(self):
        vol = make_volume(np.zeros((3, 3, 3)))
        assert binarize(vol, -1.0).bits.all()

    def test_zero_threshold_on_zero_volume_empty(self):
        vol = make_volume(np.zeros((3, 3, 3)))
        assert not binarize(vol, 0.0).bits.any()

    def test_header_carried_over(self):
        affine = diagonal_affine((2, 2, 2))
        vol = make_volume(np.ones((2, 2, 2)), voxel_size=(2, 2, 2), affine=affine)
        mask = binarize(vol, 0.5)
        assert mask.header.voxel_size == (2.0, 2.0, 2.0)
        assert np.array_equal(mask.header.affine, affine)

    def test_idempotent_through_uint8_cycle(self, tmp_path):
        rng = np.random.default_rng(5)
        vol = make_volume(rng.random((6, 6, 6)))
        mask = binarize(vol, 0.5)
        as_volume = ScalarVolume(mask.header.with_datatype(DT_UINT8),
                                 mask.bits.astype(np.float64))
        write_volume(as_volume, tmp_path / "m.nii", DT_UINT8)
        again = binarize(read_volume(tmp_path / "m.nii"), 0.5)
        assert np.array_equal(again.bits, mask.bits)

    def test_range_fraction_threshold(self):
        vol = make_volume(np.array([0.0, 10.0]).reshape(2, 1, 1))
        assert range_fraction_threshold(vol, 0.5) == 5.0
        constant = make_volume(np.full((2, 2, 2), 4.0))
        assert range_fraction_threshold(constant) == 0.0
