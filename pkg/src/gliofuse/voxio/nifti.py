"""Single-file NIfTI-1 reader/writer (``.nii`` and gzip-compressed ``.nii.gz``)."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4-byte extension flag

DATATYPES: dict[int, np.dtype] = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    256: np.dtype(np.int8),
    512: np.dtype(np.uint16),
    768: np.dtype(np.uint32),
    1024: np.dtype(np.int64),
    1280: np.dtype(np.uint64),
}
DTYPE_CODES = {dt: code for code, dt in DATATYPES.items()}

# field name -> struct code, laid out back to back from offset 0
_LAYOUT = [
    ("sizeof_hdr", "i"), ("data_type", "10s"), ("db_name", "18s"), ("extents", "i"),
    ("session_error", "h"), ("regular", "c"), ("dim_info", "B"), ("dim", "8h"),
    ("intent_p1", "f"), ("intent_p2", "f"), ("intent_p3", "f"), ("intent_code", "h"),
    ("datatype", "h"), ("bitpix", "h"), ("slice_start", "h"), ("pixdim", "8f"),
    ("vox_offset", "f"), ("scl_slope", "f"), ("scl_inter", "f"), ("slice_end", "h"),
    ("slice_code", "B"), ("xyzt_units", "B"), ("cal_max", "f"), ("cal_min", "f"),
    ("slice_duration", "f"), ("toffset", "f"), ("glmax", "i"), ("glmin", "i"),
    ("descrip", "80s"), ("aux_file", "24s"), ("qform_code", "h"), ("sform_code", "h"),
    ("quatern_b", "f"), ("quatern_c", "f"), ("quatern_d", "f"),
    ("qoffset_x", "f"), ("qoffset_y", "f"), ("qoffset_z", "f"),
    ("srow_x", "4f"), ("srow_y", "4f"), ("srow_z", "4f"),
    ("intent_name", "16s"), ("magic", "4s"),
]
_FMT = "".join(code for _, code in _LAYOUT)
assert struct.calcsize("<" + _FMT) == HEADER_SIZE


class NiftiError(ValueError):
    pass


@dataclass
class NiftiHeader:
    dims: tuple[int, ...]
    datatype_code: int
    voxel_spacing: tuple[float, ...] = (1.0, 1.0, 1.0)
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    magic: bytes = b"n+1\x00"
    vox_offset: float = float(VOX_OFFSET)
    endian: str = "<"
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 1 <= len(self.dims) <= 7:
            raise NiftiError(f"dims[0] must lie in [1, 7], got {len(self.dims)}")
        if any(d < 1 for d in self.dims):
            raise NiftiError(f"all used extents must be >= 1, got {self.dims}")
        if self.datatype_code not in DATATYPES:
            raise NiftiError(f"unsupported datatype code {self.datatype_code}")

    @property
    def dtype(self) -> np.dtype:
        return DATATYPES[self.datatype_code].newbyteorder(self.endian)

    @property
    def bitpix(self) -> int:
        return DATATYPES[self.datatype_code].itemsize * 8

    @classmethod
    def for_array(cls, arr: np.ndarray, spacing=None) -> "NiftiHeader":
        dt = np.dtype(arr.dtype).newbyteorder("=")
        if dt not in DTYPE_CODES:
            raise NiftiError(f"no NIfTI datatype for {arr.dtype}")
        spacing = tuple(float(s) for s in (spacing or (1.0,) * arr.ndim))
        return cls(dims=tuple(int(s) for s in arr.shape), datatype_code=DTYPE_CODES[dt], voxel_spacing=spacing)

    def pack(self) -> bytes:
        vals = {name: 0 for name, _ in _LAYOUT}
        vals.update(sizeof_hdr=HEADER_SIZE, data_type=b"", db_name=b"", regular=b"r",
                    descrip=b"", aux_file=b"", intent_name=b"")
        vals.update(self.extra)
        dim = [len(self.dims)] + list(self.dims) + [1] * (7 - len(self.dims))
        spacing = list(self.voxel_spacing)[:7]
        pixdim = [1.0] + spacing + [1.0] * (7 - len(spacing))
        vals.update(dim=dim, datatype=self.datatype_code, bitpix=self.bitpix, pixdim=pixdim,
                    vox_offset=float(self.vox_offset), scl_slope=self.scl_slope, scl_inter=self.scl_inter,
                    magic=self.magic)
        flat = []
        for name, code in _LAYOUT:
            v = vals[name]
            if code[0].isdigit() and not code.endswith("s"):
                flat.extend(v if isinstance(v, (list, tuple)) else [v] * int(code[:-1]))
            else:
                flat.append(v)
        return struct.pack("<" + _FMT, *flat)


def _unpack(raw: bytes) -> tuple[dict, str]:
    if len(raw) < HEADER_SIZE:
        raise NiftiError("truncated file: header shorter than 348 bytes")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == HEADER_SIZE:
            break
    else:
        raise NiftiError("malformed header: sizeof_hdr is not 348 in either byte order")
    values = struct.unpack(endian + _FMT, raw[:HEADER_SIZE])
    fields, i = {}, 0
    for name, code in _LAYOUT:
        if code[0].isdigit() and not code.endswith("s"):
            n = int(code[:-1])
            fields[name] = values[i:i + n]
            i += n
        else:
            fields[name] = values[i]
            i += 1
    return fields, endian


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (EOFError, OSError) as exc:
            raise NiftiError(f"truncated file: corrupt gzip stream in {path}") from exc
    return raw


def read_nifti_array(path) -> tuple[NiftiHeader, np.ndarray]:
    """Header and voxel array (native byte order, x fastest on disk)."""
    path = Path(path)
    raw = _read_bytes(path)
    f, endian = _unpack(raw)
    ndim = f["dim"][0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"dims[0] must lie in [1, 7], got {ndim}")
    dims = tuple(int(d) for d in f["dim"][1:1 + ndim])
    code = int(f["datatype"])
    if code not in DATATYPES:
        raise NiftiError(f"unknown datatype code {code}")
    hdr = NiftiHeader(dims=dims, datatype_code=code, voxel_spacing=tuple(float(p) for p in f["pixdim"][1:1 + ndim]),
                      scl_slope=float(f["scl_slope"]), scl_inter=float(f["scl_inter"]), magic=f["magic"],
                      vox_offset=float(f["vox_offset"]), endian=endian)
    if hdr.magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"malformed header: bad magic {hdr.magic!r}")
    if hdr.magic == b"ni1\x00":
        raise NiftiError("two-file (.hdr/.img) images are not supported")
    offset = int(hdr.vox_offset)
    count = int(np.prod(dims))
    nbytes = count * DATATYPES[code].itemsize
    if len(raw) < offset + nbytes:
        raise NiftiError(f"truncated file: expected {nbytes} voxel bytes after offset {offset}")
    data = np.frombuffer(raw, dtype=hdr.dtype, count=count, offset=offset)
    data = data.astype(DATATYPES[code], copy=True).reshape(dims, order="F")
    slope, inter = hdr.scl_slope, hdr.scl_inter
    if slope != 0 and not (slope == 1 and inter == 0):
        data = data * np.float32(slope) + np.float32(inter)
    return hdr, data


def write_nifti_array(path, header: NiftiHeader, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if tuple(grid.shape) != tuple(header.dims):
        raise NiftiError(f"grid shape {grid.shape} does not match header dims {header.dims}")
    expected = DATATYPES[header.datatype_code]
    if grid.dtype.newbyteorder("=") != expected:
        grid = grid.astype(expected)
    header = NiftiHeader(dims=header.dims, datatype_code=header.datatype_code, voxel_spacing=header.voxel_spacing,
                         scl_slope=header.scl_slope, scl_inter=header.scl_inter, magic=b"n+1\x00",
                         vox_offset=float(VOX_OFFSET), extra=header.extra)
    payload = grid.astype(expected.newbyteorder("<"), copy=False).tobytes(order="F")
    Path(path).write_bytes(header.pack() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload)
