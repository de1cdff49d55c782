"""MetaImage (.mhd + .raw, or single-file .mha) reading and writing.

Arrays are returned in numpy order, i.e. the reverse of ``DimSize``: a header
``DimSize = W H N`` yields an array of shape (N, H, W). Multi-channel images
(``ElementNumberOfChannels > 1``) get a trailing channel axis.
"""

from pathlib import Path

import numpy as np

from ..exceptions import MetaImageFormatError, TruncationError
from .volume import Volume

ELEMENT_TYPES = {
    "MET_UCHAR": np.uint8,
    "MET_CHAR": np.int8,
    "MET_SHORT": np.int16,
    "MET_USHORT": np.uint16,
    "MET_INT": np.int32,
    "MET_UINT": np.uint32,
    "MET_FLOAT": np.float32,
    "MET_DOUBLE": np.float64,
}
_TYPE_NAMES = {np.dtype(v): k for k, v in ELEMENT_TYPES.items()}
_TRUE = {"true", "1", "yes"}


def _parse_header(lines, path):
    header = {}
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise MetaImageFormatError(f"{path}: malformed header line {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        header[key] = value
        if key == "ElementDataFile":
            break
    return header


def _read_header(path):
    path = Path(path)
    blob = path.read_bytes()
    lines, offset = [], 0
    # the header ends at the ElementDataFile line; for LOCAL data the payload follows
    while offset < len(blob):
        end = blob.find(b"\n", offset)
        end = len(blob) if end < 0 else end + 1
        line = blob[offset:end].decode("latin-1")
        lines.append(line)
        offset = end
        if line.strip().startswith("ElementDataFile"):
            break
    return _parse_header(lines, path), blob, offset


def _require(header, key, path):
    if key not in header:
        raise MetaImageFormatError(f"{path}: header is missing required key {key}")
    return header[key]


def read_metaimage_array(path):
    """Read any MetaImage file; return ``(array, spacing)`` in numpy axis order."""
    path = Path(path)
    header, blob, data_offset = _read_header(path)
    ndims = int(_require(header, "NDims", path))
    dims = [int(v) for v in _require(header, "DimSize", path).split()]
    if len(dims) != ndims:
        raise MetaImageFormatError(f"{path}: DimSize has {len(dims)} entries but NDims = {ndims}")
    type_name = _require(header, "ElementType", path)
    if type_name not in ELEMENT_TYPES:
        raise MetaImageFormatError(f"{path}: unsupported ElementType {type_name}")
    data_file = _require(header, "ElementDataFile", path)
    spacing = [float(v) for v in header.get("ElementSpacing", " ".join(["1"] * ndims)).split()]
    if len(spacing) != ndims:
        raise MetaImageFormatError(f"{path}: ElementSpacing has {len(spacing)} entries but NDims = {ndims}")
    msb_keys = [k for k in ("ElementByteOrderMSB", "BinaryDataByteOrderMSB") if k in header]
    msb_values = {header[k].lower() in _TRUE for k in msb_keys}
    if len(msb_values) > 1:
        raise MetaImageFormatError(f"{path}: contradictory byte order keys")
    big_endian = msb_values.pop() if msb_values else False
    channels = int(header.get("ElementNumberOfChannels", "1"))

    dtype = np.dtype(ELEMENT_TYPES[type_name]).newbyteorder(">" if big_endian else "<")
    count = int(np.prod(dims)) * channels
    if data_file.upper() == "LOCAL":
        payload = blob[data_offset:]
    else:
        raw_path = path.parent / data_file
        if not raw_path.exists():
            raise MetaImageFormatError(f"{path}: data file {raw_path} not found")
        payload = raw_path.read_bytes()
    expected = count * dtype.itemsize
    if len(payload) != expected:
        raise TruncationError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype=dtype, count=count)
    shape = tuple(reversed(dims)) + ((channels,) if channels > 1 else ())
    arr = arr.reshape(shape).astype(dtype.newbyteorder("="))
    return arr, tuple(reversed(spacing))


def write_metaimage_array(path, array, spacing=None, channels=False, big_endian=False):
    """Write ``array`` (numpy axis order) as ``path`` (.mhd) plus a sibling .raw.

    With ``channels=True`` the last axis is stored as ElementNumberOfChannels.
    """
    path = Path(path)
    array = np.asarray(array)
    if array.dtype not in _TYPE_NAMES:
        array = array.astype(np.float32)
    spatial = array.shape[:-1] if channels else array.shape
    ndims = len(spatial)
    spacing = (1.0,) * ndims if spacing is None else tuple(spacing)
    if len(spacing) != ndims:
        raise MetaImageFormatError(f"spacing {spacing} does not match {ndims} spatial dims")
    raw_name = path.with_suffix(".raw").name
    lines = [
        "ObjectType = Image",
        f"NDims = {ndims}",
        "BinaryData = True",
        f"BinaryDataByteOrderMSB = {big_endian}",
        f"ElementByteOrderMSB = {big_endian}",
        f"DimSize = {' '.join(str(d) for d in reversed(spatial))}",
        f"ElementSpacing = {' '.join(repr(float(s)) for s in reversed(spacing))}",
    ]
    if channels:
        lines.append(f"ElementNumberOfChannels = {array.shape[-1]}")
    lines += [f"ElementType = {_TYPE_NAMES[array.dtype]}", f"ElementDataFile = {raw_name}"]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    order = ">" if big_endian else "<"
    payload = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder(order))
    path.with_suffix(".raw").write_bytes(payload.tobytes())
    return path


def read_metaimage(header_path, volume_id=None):
    """Load a 3-D MetaImage as a :class:`Volume` with float voxels."""
    header_path = Path(header_path)
    header, _, _ = _read_header(header_path)
    if header.get("NDims") != "3":
        raise MetaImageFormatError(f"{header_path}: expected NDims = 3, got {header.get('NDims')}")
    arr, spacing = read_metaimage_array(header_path)
    if arr.ndim != 3:
        raise MetaImageFormatError(f"{header_path}: multi-channel data is not a scalar volume")
    # file order (slice, row, col) spacing -> Volume's (row, col, slice)
    sz, sy, sx = spacing
    return Volume(volume_id or header_path.stem, arr.astype(np.float32), (sy, sx, sz))


def write_metaimage(path, volume, dtype=np.float32, big_endian=False):
    sy, sx, sz = volume.spacing
    return write_metaimage_array(
        path, np.asarray(volume.voxels, dtype=dtype), spacing=(sz, sy, sx), big_endian=big_endian
    )
