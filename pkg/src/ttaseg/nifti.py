"""Minimal NIfTI-1 single-file (.nii) reader/writer.

Supports uncompressed single-file images with datatype codes 2 (uint8),
4 (int16) and 16 (float32). Orientation is handled only through the pixdim
spacing fields; qform/sform information beyond spacing is ignored on read
(the writer emits an informational diagonal sform). Compressed ``.nii.gz``
and two-file ``.hdr/.img`` pairs are out of scope.

Multi-channel volumes are written as 5D images (dim0=5, dim4=1,
dim5=channels), the NIfTI convention for vector-valued data; 4D images are
read with the fourth axis treated as channels.

A raw sidecar export (``.raw`` + ``.json``) mirrors the wire-protocol
payload layout for interop with external predictors.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    NiftiFormatError,
    TruncatedFileError,
    UnsupportedDtypeError,
)
from .volume import LabelMap, Volume, array_to_bytes, bytes_to_array

HEADER_SIZE = 348
VOX_OFFSET = 352

_HEADER_DTYPE = np.dtype([
    ("sizeof_hdr", "<i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "<i4"),
    ("session_error", "<i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "<i2", (8,)),
    ("intent_p1", "<f4"),
    ("intent_p2", "<f4"),
    ("intent_p3", "<f4"),
    ("intent_code", "<i2"),
    ("datatype", "<i2"),
    ("bitpix", "<i2"),
    ("slice_start", "<i2"),
    ("pixdim", "<f4", (8,)),
    ("vox_offset", "<f4"),
    ("scl_slope", "<f4"),
    ("scl_inter", "<f4"),
    ("slice_end", "<i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "<f4"),
    ("cal_min", "<f4"),
    ("slice_duration", "<f4"),
    ("toffset", "<f4"),
    ("glmax", "<i4"),
    ("glmin", "<i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "<i2"),
    ("sform_code", "<i2"),
    ("quatern_b", "<f4"),
    ("quatern_c", "<f4"),
    ("quatern_d", "<f4"),
    ("qoffset_x", "<f4"),
    ("qoffset_y", "<f4"),
    ("qoffset_z", "<f4"),
    ("srow_x", "<f4", (4,)),
    ("srow_y", "<f4", (4,)),
    ("srow_z", "<f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
])

DTYPE_CODES = {2: np.uint8, 4: np.int16, 16: np.float32}
_CODES_BY_KIND = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.float32): 16}


def _new_header(dims, channels, spacing, dtype_code) -> np.ndarray:
    hdr = np.zeros((), dtype=_HEADER_DTYPE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    if channels == 1:
        dim[0] = 3
        dim[1:4] = dims
    else:
        dim[0] = 5
        dim[1:4] = dims
        dim[4] = 1
        dim[5] = channels
    hdr["dim"] = dim
    hdr["datatype"] = dtype_code
    hdr["bitpix"] = np.dtype(DTYPE_CODES[dtype_code]).itemsize * 8
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = spacing
    pixdim[4:6] = 1.0
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # millimeters
    hdr["descrip"] = b"ttaseg"
    # Informational only; readers in this package use pixdim exclusively.
    hdr["sform_code"] = 1
    hdr["srow_x"] = (spacing[0], 0, 0, 0)
    hdr["srow_y"] = (0, spacing[1], 0, 0)
    hdr["srow_z"] = (0, 0, spacing[2], 0)
    hdr["magic"] = b"n+1"
    return hdr


def _write_nifti(path, data: np.ndarray, spacing, dtype_code: int) -> None:
    """data: (channels, nx, ny, nz), already in its on-disk dtype."""
    path = Path(path)
    if path.suffix == ".gz":
        raise NiftiFormatError(f"{path}: compressed NIfTI is not supported")
    channels = data.shape[0]
    dims = data.shape[1:]
    hdr = _new_header(dims, channels, spacing, dtype_code)
    with open(path, "wb") as f:
        f.write(hdr.tobytes())
        f.write(b"\0" * (VOX_OFFSET - HEADER_SIZE))
        f.write(array_to_bytes(data))


def _read_nifti(path):
    """Returns (data (channels, nx, ny, nz) native dtype, spacing)."""
    path = Path(path)
    if path.suffix == ".gz":
        raise NiftiFormatError(f"{path}: compressed NIfTI is not supported")
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is shorter than a header")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTYPE)[0]
    swapped = False
    if hdr["sizeof_hdr"] != HEADER_SIZE:
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTYPE.newbyteorder())[0]
        swapped = True
        if hdr["sizeof_hdr"] != HEADER_SIZE:
            raise NiftiFormatError(f"{path}: sizeof_hdr is not {HEADER_SIZE}")
    magic = bytes(hdr["magic"]).rstrip(b"\0")
    if magic == b"ni1":
        raise NiftiFormatError(f"{path}: two-file NIfTI (hdr/img) is not supported")
    if magic != b"n+1":
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")
    code = int(hdr["datatype"])
    if code not in DTYPE_CODES:
        raise UnsupportedDtypeError(f"{path}: datatype code {code} is not supported")
    dtype = np.dtype(DTYPE_CODES[code])
    if swapped:
        dtype = dtype.newbyteorder()

    ndim = int(hdr["dim"][0])
    if ndim < 3 or ndim > 5:
        raise DimensionMismatchError(f"{path}: {ndim}-dimensional image is not supported")
    shape = tuple(int(d) for d in hdr["dim"][1:1 + ndim])
    if any(d <= 0 for d in shape):
        raise DimensionMismatchError(f"{path}: non-positive dim entries {shape}")
    if ndim == 5 and shape[3] != 1:
        raise DimensionMismatchError(
            f"{path}: 5D image with time axis {shape[3]} != 1 is not supported"
        )
    dims = shape[:3]
    channels = shape[3] if ndim == 4 else (shape[4] if ndim == 5 else 1)

    spacing = tuple(float(s) for s in hdr["pixdim"][1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise NiftiFormatError(f"{path}: non-positive pixdim spacing {spacing}")

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: vox_offset {offset} overlaps the header")
    nbytes = channels * dims[0] * dims[1] * dims[2] * dtype.itemsize
    payload = raw[offset:offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedFileError(
            f"{path}: payload has {len(payload)} of {nbytes} expected bytes"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape(dims + (channels,), order="F").transpose(3, 0, 1, 2)
    data = np.ascontiguousarray(data)
    if swapped:
        data = data.astype(data.dtype.newbyteorder("="))

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(np.float32) * np.float32(slope) + np.float32(inter)
    return data, spacing


def save_volume(v: Volume, path) -> None:
    """Write a float32 single-file NIfTI-1 image."""
    _write_nifti(path, v.data, v.spacing, 16)


def load_volume(path) -> Volume:
    """Read a volume; integer voxel data is cast to float32."""
    data, spacing = _read_nifti(path)
    return Volume(data.astype(np.float32, copy=False), spacing)


def save_label_map(l: LabelMap, path) -> None:
    """Write a uint8 single-file NIfTI-1 label image."""
    _write_nifti(path, l.labels[np.newaxis], l.spacing, 2)


def load_label_map(path, alphabet=None) -> LabelMap:
    """Read a label map; validates against ``alphabet`` when given.

    Accepts uint8, int16 or float32 files as long as the values are
    integers in [0, 255].
    """
    data, spacing = _read_nifti(path)
    if data.shape[0] != 1:
        raise DimensionMismatchError(
            f"{path}: label map has {data.shape[0]} channels, expected 1"
        )
    values = data[0]
    if values.dtype != np.uint8:
        if not np.array_equal(values, np.rint(values)):
            raise NiftiFormatError(f"{path}: label values are not integers")
        if values.min() < 0 or values.max() > 255:
            raise NiftiFormatError(f"{path}: label values outside uint8 range")
        values = values.astype(np.uint8)
    return LabelMap(values, spacing, alphabet=alphabet)


def save_sidecar(v: Volume, basepath) -> None:
    """Raw export: ``<base>.raw`` payload plus ``<base>.json`` header.

    The payload layout is identical to the wire protocol (float32
    little-endian, channel-major, x fastest).
    """
    base = Path(basepath)
    header = {
        "dims": list(v.dims),
        "channels": v.channels,
        "spacing": list(v.spacing),
        "dtype": "f32le",
    }
    base.with_suffix(".json").write_text(json.dumps(header, sort_keys=True))
    base.with_suffix(".raw").write_bytes(array_to_bytes(v.data))


def load_sidecar(basepath) -> Volume:
    base = Path(basepath)
    header = json.loads(base.with_suffix(".json").read_text())
    if header.get("dtype") != "f32le":
        raise UnsupportedDtypeError(f"{base}: sidecar dtype {header.get('dtype')!r}")
    dims = tuple(header["dims"])
    buf = base.with_suffix(".raw").read_bytes()
    data = bytes_to_array(buf, header["channels"], dims)
    return Volume(data, tuple(header["spacing"]))
