import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gliofuse.voxio import (DATATYPES, HEADER_SIZE, VOX_OFFSET, CaseRecord, LabelMask, NiftiError,
                            NiftiHeader, Volume, crop_offsets, derive_regions, discover_cases, load_case,
                            preprocess_case, read_nifti, read_nifti_array, remap_labels, save_case,
                            split_dataset, write_nifti, write_nifti_array)
from gliofuse.voxio.nifti import _FMT, _LAYOUT


def _field_offset(name):
    fmt = "<"
    for n, code in _LAYOUT:
        if n == name:
            return struct.calcsize(fmt)
        fmt += code
    raise KeyError(name)


# --- NIfTI-1 -----------------------------------------------------------------

def test_layout_offsets_follow_the_standard():
    assert struct.calcsize("<" + _FMT) == 348
    expected = {"dim": 40, "datatype": 70, "bitpix": 72, "pixdim": 76, "vox_offset": 108,
                "scl_slope": 112, "scl_inter": 116, "magic": 344}
    assert {k: _field_offset(k) for k in expected} == expected


def test_float_volume_file_size(tmp_path):
    p = tmp_path / "v.nii"
    write_nifti(p, None, Volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2)))
    raw = p.read_bytes()
    assert len(raw) == VOX_OFFSET + 32
    assert struct.unpack_from("<i", raw, 0)[0] == HEADER_SIZE
    assert struct.unpack_from("<h", raw, 70)[0] == 16
    assert raw[344:348] == b"n+1\x00"


def test_datatype_16_decodes_float32(tmp_path):
    p = tmp_path / "f.nii"
    data = np.linspace(-1, 1, 24, dtype=np.float32).reshape(2, 3, 4)
    write_nifti(p, None, Volume(data))
    hdr, vol = read_nifti(p)
    assert hdr.datatype_code == 16
    assert vol.data.dtype == np.float32
    np.testing.assert_array_equal(vol.data, data)


def test_mask_written_as_uint8(tmp_path):
    p = tmp_path / "m.nii"
    labels = np.array([0, 1, 2, 3] * 2, dtype=np.int64).reshape(2, 2, 2)
    write_nifti(p, None, LabelMask(labels))
    hdr, mask = read_nifti(p)
    assert hdr.datatype_code == 2
    assert isinstance(mask, LabelMask)
    np.testing.assert_array_equal(mask.labels, labels)


def test_voxel_order_is_x_fastest(tmp_path):
    p = tmp_path / "o.nii"
    data = np.arange(6, dtype=np.float32).reshape(3, 2, 1)
    write_nifti(p, None, Volume(data))
    payload = np.frombuffer(p.read_bytes()[VOX_OFFSET:], dtype="<f4")
    np.testing.assert_array_equal(payload, data.ravel(order="F"))


def test_big_endian_file_is_decoded(tmp_path):
    data = np.arange(24, dtype=np.int16).reshape(2, 3, 4) - 5
    hdr = NiftiHeader.for_array(data)
    little = hdr.pack()
    values = struct.unpack("<" + _FMT, little)
    big = struct.pack(">" + _FMT, *values)
    p = tmp_path / "be.nii"
    p.write_bytes(big + b"\x00" * 4 + data.astype(">i2").tobytes(order="F"))
    h, out = read_nifti_array(p)
    assert h.endian == ">"
    np.testing.assert_array_equal(out, data)


@pytest.mark.parametrize("first", [0, 349, 540])
def test_bad_sizeof_hdr_is_malformed(tmp_path, first):
    p = tmp_path / "bad.nii"
    write_nifti(p, None, Volume(np.zeros((2, 2, 2), np.float32)))
    raw = bytearray(p.read_bytes())
    raw[:4] = struct.pack("<i", first)
    p.write_bytes(bytes(raw))
    with pytest.raises(NiftiError, match="malformed header"):
        read_nifti(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "t.nii"
    write_nifti(p, None, Volume(np.zeros((4, 4, 4), np.float32)))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(NiftiError, match="truncated"):
        read_nifti(p)


def test_truncated_header_rejected(tmp_path):
    p = tmp_path / "t.nii"
    p.write_bytes(struct.pack("<i", 348) + b"\x00" * 100)
    with pytest.raises(NiftiError, match="truncated"):
        read_nifti(p)


def test_unknown_datatype_rejected(tmp_path):
    p = tmp_path / "u.nii"
    write_nifti(p, None, Volume(np.zeros((2, 2, 2), np.float32)))
    raw = bytearray(p.read_bytes())
    raw[70:72] = struct.pack("<h", 99)
    p.write_bytes(bytes(raw))
    with pytest.raises(NiftiError, match="datatype"):
        read_nifti(p)


@pytest.mark.parametrize("ndim", [0, 8])
def test_dim0_out_of_range_rejected(tmp_path, ndim):
    p = tmp_path / "d.nii"
    write_nifti(p, None, Volume(np.zeros((2, 2, 2), np.float32)))
    raw = bytearray(p.read_bytes())
    raw[40:42] = struct.pack("<h", ndim)
    p.write_bytes(bytes(raw))
    with pytest.raises(NiftiError, match="dims"):
        read_nifti(p)


def test_scaling_applied_when_slope_nonzero(tmp_path):
    data = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
    hdr = NiftiHeader.for_array(data)
    hdr.scl_slope, hdr.scl_inter = 2.0, -1.0
    p = tmp_path / "s.nii"
    write_nifti_array(p, hdr, data)
    _, out = read_nifti_array(p)
    np.testing.assert_allclose(out, 2.0 * data - 1.0)


def test_zero_slope_means_unscaled(tmp_path):
    data = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
    hdr = NiftiHeader.for_array(data)
    hdr.scl_slope, hdr.scl_inter = 0.0, 5.0
    p = tmp_path / "z.nii"
    write_nifti_array(p, hdr, data)
    _, out = read_nifti_array(p)
    assert out.dtype == np.int16
    np.testing.assert_array_equal(out, data)


def test_gzip_is_transparent(tmp_path):
    data = np.random.default_rng(0).random((3, 4, 5)).astype(np.float32)
    plain = tmp_path / "a.nii"
    write_nifti(plain, None, Volume(data))
    gz = tmp_path / "a.nii.gz"
    gz.write_bytes(gzip.compress(plain.read_bytes()))
    np.testing.assert_array_equal(read_nifti(gz)[1].data, data)


def test_shape_header_mismatch_rejected(tmp_path):
    hdr = NiftiHeader.for_array(np.zeros((2, 2, 2), np.float32))
    with pytest.raises(NiftiError):
        write_nifti_array(tmp_path / "x.nii", hdr, np.zeros((2, 2, 3), np.float32))


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_nifti(tmp_path / "missing" / "x.nii", None, Volume(np.zeros((2, 2, 2), np.float32)))


_dtypes = st.sampled_from(sorted(DATATYPES, key=int)).map(lambda c: DATATYPES[c])


@given(hnp.arrays(_dtypes, hnp.array_shapes(min_dims=1, max_dims=5, max_side=5),
                  elements={"allow_nan": False}))
def test_round_trip_is_bit_identical(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("rt") / "r.nii"
    write_nifti_array(p, NiftiHeader.for_array(arr), arr)
    _, out = read_nifti_array(p)
    assert out.dtype == arr.dtype and out.shape == arr.shape
    assert out.tobytes() == arr.tobytes()
    # and again through the re-written file
    write_nifti_array(p, NiftiHeader.for_array(out), out)
    assert read_nifti_array(p)[1].tobytes() == arr.tobytes()


# --- preprocessing -----------------------------------------------------------

def _case(shape, rng, labels=None):
    mods = {m: Volume(rng.normal(size=shape) * 100 + 50) for m in ("FLAIR", "T1", "T1CE", "T2")}
    return CaseRecord("c", mods, LabelMask(labels) if labels is not None else None)


def test_label_four_moves_to_three():
    np.testing.assert_array_equal(remap_labels(np.array([0, 1, 2, 4])), [0, 1, 2, 3])


def test_unexpected_label_rejected():
    with pytest.raises(ValueError):
        remap_labels(np.array([0, 5]))


def test_constant_modality_normalizes_to_zero(rng):
    case = _case((4, 4, 4), rng)
    mods = dict(case.modalities)
    mods["T1"] = Volume(np.full((4, 4, 4), 7.0))
    out = preprocess_case(CaseRecord("c", mods), (4, 4, 4))
    assert np.all(out.modalities["T1"].data == 0)


def test_brats_crop_offsets():
    assert crop_offsets((240, 240, 155), (128, 128, 128)) == (56, 56, 13)


def test_crop_is_translation_consistent(rng):
    labels = rng.choice([0, 1, 2, 4], size=(9, 8, 7))
    case = _case((9, 8, 7), rng, labels)
    out = preprocess_case(case, (4, 5, 3))
    off = crop_offsets((9, 8, 7), (4, 5, 3))
    assert off == (2, 1, 2)
    src = case.mask.labels[2:6, 1:6, 2:5]
    np.testing.assert_array_equal(out.mask.labels, np.where(src == 4, 3, src))
    raw = case.modalities["FLAIR"].data[2:6, 1:6, 2:5]
    np.testing.assert_allclose(out.modalities["FLAIR"].data, (raw - raw.min()) / (raw.max() - raw.min()), rtol=1e-6)


@given(st.integers(0, 2**31 - 1), st.tuples(*[st.integers(2, 7)] * 3))
def test_preprocess_ranges(seed, shape):
    rng = np.random.default_rng(seed)
    case = _case(shape, rng, rng.choice([0, 1, 2, 4], size=shape))
    target = tuple(max(1, s - 1) for s in shape)
    out = preprocess_case(case, target)
    for m in out.modalities.values():
        assert m.shape == target
        assert m.data.min() >= 0 and m.data.max() <= 1
    assert set(np.unique(out.mask.labels)) <= {0, 1, 2, 3}


def test_target_larger_than_input_rejected(rng):
    with pytest.raises(ValueError, match="exceeds"):
        preprocess_case(_case((4, 4, 4), rng), (5, 4, 4))


def test_modality_shape_mismatch_rejected(rng):
    mods = {m: Volume(np.zeros((4, 4, 4))) for m in ("FLAIR", "T1", "T1CE")}
    mods["T2"] = Volume(np.zeros((4, 4, 5)))
    with pytest.raises(ValueError, match="shapes differ"):
        CaseRecord("c", mods)


def test_missing_modality_rejected():
    with pytest.raises(ValueError, match="missing"):
        CaseRecord("c", {"FLAIR": Volume(np.zeros((2, 2, 2)))})


# --- regions -----------------------------------------------------------------

@pytest.mark.parametrize("label,expected", [(0, (0, 0, 0)), (1, (1, 1, 0)), (2, (1, 0, 0)), (3, (1, 1, 1))])
def test_region_membership(label, expected):
    r = derive_regions(np.array([label]))
    assert (int(r["WT"][0]), int(r["TC"][0]), int(r["ET"][0])) == expected


@given(hnp.arrays(np.uint8, hnp.array_shapes(max_dims=3, max_side=6), elements=st.integers(0, 3)))
def test_regions_nest(labels):
    r = derive_regions(LabelMask(labels))
    assert np.all(r["ET"] <= r["TC"]) and np.all(r["TC"] <= r["WT"])


def test_region_out_of_range():
    with pytest.raises(ValueError):
        derive_regions(np.array([4]))


# --- split -------------------------------------------------------------------

def test_split_sizes():
    s = split_dataset([f"c{i}" for i in range(10)], 0.8, seed=3)
    assert (len(s.train), len(s.validation)) == (8, 2)
    s = split_dataset([f"c{i}" for i in range(5)], 0.8, seed=3)
    assert (len(s.train), len(s.validation)) == (4, 1)


def test_split_deterministic():
    ids = [f"c{i}" for i in range(12)]
    assert split_dataset(ids, 0.8, 9) == split_dataset(ids, 0.8, 9)


@given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_partitions(n, ratio, seed):
    ids = [f"c{i}" for i in range(n)]
    s = split_dataset(ids, ratio, seed)
    assert not set(s.train) & set(s.validation)
    assert sorted(s.train + s.validation) == sorted(ids)
    assert len(s.train) == min(max(round(ratio * n), 1), n - 1)


def test_split_needs_two_cases():
    with pytest.raises(ValueError):
        split_dataset(["only"], 0.8, 0)


# --- directory layout ----------------------------------------------------------

def test_discovery_finds_exactly_saved_cases(tmp_path, small_case):
    for cid in ("b", "a", "c"):
        save_case(tmp_path, CaseRecord(cid, small_case.modalities, small_case.mask))
    (tmp_path / "stray").mkdir()
    (tmp_path / "notes.txt").write_text("x")
    assert discover_cases(tmp_path) == ["a", "b", "c"]
    back = load_case(tmp_path, "b", require_mask=True)
    for m, v in small_case.modalities.items():
        np.testing.assert_array_equal(back.modalities[m].data, v.data)
    np.testing.assert_array_equal(back.mask.labels, small_case.mask.labels)


def test_missing_mask_when_required(tmp_path, small_case):
    save_case(tmp_path, CaseRecord("x", small_case.modalities))
    assert load_case(tmp_path, "x").mask is None
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path, "x", require_mask=True)
