"""Single-file NIfTI-1 subset: float32 or int16 payloads, no extensions, no compression."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "HEADER_DTYPE",
    "VolumeFile",
    "VolumeFormatError",
    "read_volume",
    "write_volume",
]

HEADER_SIZE = 348
VOX_OFFSET = 352  # header plus the 4-byte extension flag

# first number in comments is the byte offset in the header
HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "<i4"),  # 0; must be 348
        ("data_type", "S10"),  # 4
        ("db_name", "S18"),  # 14
        ("extents", "<i4"),  # 32
        ("session_error", "<i2"),  # 36
        ("regular", "S1"),  # 38
        ("dim_info", "u1"),  # 39
        ("dim", "<i2", (8,)),  # 40
        ("intent_p", "<f4", (3,)),  # 56
        ("intent_code", "<i2"),  # 68
        ("datatype", "<i2"),  # 70
        ("bitpix", "<i2"),  # 72
        ("slice_start", "<i2"),  # 74
        ("pixdim", "<f4", (8,)),  # 76
        ("vox_offset", "<f4"),  # 108
        ("scl_slope", "<f4"),  # 112
        ("scl_inter", "<f4"),  # 116
        ("slice_end", "<i2"),  # 120
        ("slice_code", "u1"),  # 122
        ("xyzt_units", "u1"),  # 123
        ("cal_max", "<f4"),  # 124
        ("cal_min", "<f4"),  # 128
        ("slice_duration", "<f4"),  # 132
        ("toffset", "<f4"),  # 136
        ("glmax", "<i4"),  # 140
        ("glmin", "<i4"),  # 144
        ("descrip", "S80"),  # 148
        ("aux_file", "S24"),  # 228
        ("qform_code", "<i2"),  # 252
        ("sform_code", "<i2"),  # 254
        ("quatern", "<f4", (3,)),  # 256
        ("qoffset", "<f4", (3,)),  # 268
        ("srow", "<f4", (3, 4)),  # 280
        ("intent_name", "S16"),  # 328
        ("magic", "S4"),  # 344; "n+1" for single-file volumes
    ]
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

MAGIC = b"n+1"
DATATYPES: dict[int, np.dtype] = {
    4: np.dtype("<i2"),  # DT_INT16
    16: np.dtype("<f4"),  # DT_FLOAT32
}
XYZT_MM_SEC = 2 | 8


class VolumeFormatError(ValueError):
    """Volume file is not in the supported NIfTI-1 subset."""


@dataclass(eq=False)
class VolumeFile:
    """Voxel data with its grid spacing.

    Attributes:
        data:           array of up to 4 axes (x, y, z, t).
        voxel_sizes:    spacing per axis; the fourth is the repetition time.
        description:    free text stored in the header, at most 80 bytes.
    """

    data: NDArray[np.floating] = field(repr=False)
    voxel_sizes: tuple[float, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if not 1 <= self.data.ndim <= 4:
            raise VolumeFormatError(f"volumes have 1 to 4 axes, got {self.data.ndim}")
        if not self.voxel_sizes:
            self.voxel_sizes = (1.0,) * self.data.ndim
        if len(self.voxel_sizes) != self.data.ndim:
            raise VolumeFormatError(
                f"{len(self.voxel_sizes)} voxel sizes for {self.data.ndim} axes"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        """Axis lengths."""
        return tuple(self.data.shape)

    def spatial(self) -> NDArray[np.float64]:
        """Return a 3D volume with singleton axes beyond the second dropped."""
        data = np.asarray(self.data, dtype=float)
        while data.ndim > 2 and data.shape[-1] == 1:
            data = data[..., 0]
        return data

    def series(self) -> NDArray[np.float64]:
        """Return a 4D volume as spatial axes + time, dropping a singleton z axis."""
        if self.data.ndim != 4:
            raise VolumeFormatError(f"expected a 4D time series, got shape {self.shape}")
        data = np.asarray(self.data, dtype=float)
        return data[:, :, 0, :] if data.shape[2] == 1 else data


def write_volume(
    path: str | Path, volume: VolumeFile | ArrayLike, dtype: str = "float32"
) -> None:
    """Write `volume` as a single-file NIfTI-1 volume.

    `dtype` is "float32" (stored as is) or "int16" (boolean and label maps).
    """

    if not isinstance(volume, VolumeFile):
        volume = VolumeFile(np.asarray(volume))
    codes = {str(dt): code for code, dt in DATATYPES.items()}
    code = codes.get(str(np.dtype(dtype).newbyteorder("<")))
    if code is None:
        raise VolumeFormatError(f"unsupported datatype {dtype!r}")
    stored = DATATYPES[code]

    data = np.asarray(volume.data)
    if stored.kind == "i":
        if data.dtype.kind == "f" and not np.array_equal(data, np.round(data)):
            raise VolumeFormatError("int16 volumes need integral values")
        if data.size and (data.min() < -32768 or data.max() > 32767):
            raise VolumeFormatError("values exceed the int16 range")

    header = np.zeros((), dtype=HEADER_DTYPE)
    header["sizeof_hdr"] = HEADER_SIZE
    header["dim"][0] = data.ndim
    header["dim"][1 : data.ndim + 1] = data.shape
    header["dim"][data.ndim + 1 :] = 1
    header["datatype"] = code
    header["bitpix"] = stored.itemsize * 8
    header["pixdim"][0] = 1.0
    header["pixdim"][1 : data.ndim + 1] = volume.voxel_sizes
    header["pixdim"][data.ndim + 1 :] = 1.0
    header["vox_offset"] = VOX_OFFSET
    header["scl_slope"] = 1.0
    header["xyzt_units"] = XYZT_MM_SEC
    header["descrip"] = volume.description.encode()[:80]
    header["srow"][0, 0] = volume.voxel_sizes[0]
    if data.ndim > 1:
        header["srow"][1, 1] = volume.voxel_sizes[1]
    if data.ndim > 2:
        header["srow"][2, 2] = volume.voxel_sizes[2]
    header["sform_code"] = 1
    header["magic"] = MAGIC

    payload = np.asarray(data, dtype=stored).tobytes(order="F")
    path = Path(path)
    with path.open("wb") as fp:
        fp.write(header.tobytes())
        fp.write(b"\0" * (VOX_OFFSET - HEADER_SIZE))
        fp.write(payload)
    logger.debug("wrote {} {} {}", path, data.shape, stored)


def read_volume(path: str | Path) -> VolumeFile:
    """Read a single-file NIfTI-1 volume; int16 payloads are scaled to float."""

    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise VolumeFormatError(f"{path}: unsupported format (file shorter than a header)")

    header = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if header["sizeof_hdr"] != HEADER_SIZE or header["magic"] != MAGIC:
        raise VolumeFormatError(f"{path}: unsupported format (bad magic {header['magic']!r})")

    code = int(header["datatype"])
    if code not in DATATYPES:
        raise VolumeFormatError(f"{path}: unsupported datatype code {code}")
    stored = DATATYPES[code]

    ndim = int(header["dim"][0])
    if not 1 <= ndim <= 4:
        raise VolumeFormatError(f"{path}: unsupported format ({ndim} axes)")
    shape = tuple(int(n) for n in header["dim"][1 : ndim + 1])
    if any(n < 1 for n in shape):
        raise VolumeFormatError(f"{path}: unsupported format (dims {shape})")

    offset = int(header["vox_offset"])
    nbytes = int(np.prod(shape)) * stored.itemsize
    if len(raw) < offset + nbytes:
        raise VolumeFormatError(
            f"{path}: truncated payload ({len(raw) - offset} of {nbytes} bytes)"
        )

    data = np.frombuffer(raw, dtype=stored, count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F")
    slope = float(header["scl_slope"])
    inter = float(header["scl_inter"])
    if stored.kind == "i":
        slope = slope if slope != 0.0 else 1.0
        data = data.astype(float) * slope + inter
    elif slope not in (0.0, 1.0) or inter != 0.0:
        data = data.astype(float) * slope + inter
    else:
        data = data.astype(np.float32)  # native byte order, writable copy

    voxel_sizes = tuple(float(s) for s in header["pixdim"][1 : ndim + 1])
    description = bytes(header["descrip"]).rstrip(b"\0").decode(errors="replace")
    return VolumeFile(data, voxel_sizes, description)
