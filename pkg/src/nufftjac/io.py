"""Binary file formats.

``CIMG0001``  magic, u32 D, D x u32 dims, then N complex values as
              interleaved little-endian float64 (re, im), dim 1 fastest.
              Several images may follow each other in one file (coil stacks).
``TRAJ0001``  magic, u32 D, u32 n_shots, u32 samples_per_shot,
              float64 dwell_ms, then M x D float64 sample-major.
``FLDT0001``  magic, u32 rows, u32 cols, then rows x cols complex values
              row-major (a field-model b or c table).
``KSPC0001``  magic, u32 M, u32 n_coils, then M x n_coils complex values
              sample-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import ComplexImage, ImageGrid, Trajectory

__all__ = [
    "FormatError",
    "write_cimg",
    "read_cimg",
    "read_cimg_stack",
    "write_traj",
    "read_traj",
    "write_table",
    "read_table",
    "write_kspace",
    "read_kspace",
]

CIMG_MAGIC = b"CIMG0001"
TRAJ_MAGIC = b"TRAJ0001"
FLDT_MAGIC = b"FLDT0001"
KSPC_MAGIC = b"KSPC0001"

_C128 = np.dtype("<c16")
_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def _check_magic(buf: bytes, magic: bytes, path):
    if buf[:8] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, got {buf[:8]!r}")


def _encode_image(img) -> bytes:
    data = np.asarray(img.data if isinstance(img, ComplexImage) else img, dtype=complex)
    dims = data.shape
    head = CIMG_MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return head + np.asarray(data.ravel(order="F"), dtype=_C128).tobytes()


def write_cimg(path, images) -> None:
    """Write one image or a sequence of same-grid images (a stack)."""
    if isinstance(images, (ComplexImage, np.ndarray)):
        images = [images]
    with open(path, "wb") as f:
        for img in images:
            f.write(_encode_image(img))


def read_cimg_stack(path) -> list[ComplexImage]:
    buf = Path(path).read_bytes()
    out = []
    pos = 0
    while pos < len(buf):
        _check_magic(buf[pos:], CIMG_MAGIC, path)
        pos += 8
        try:
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            grid = ImageGrid(dims)
            nbytes = grid.size * 16
            if pos + nbytes > len(buf):
                raise FormatError(f"{path}: truncated image data")
            flat = np.frombuffer(buf, dtype=_C128, count=grid.size, offset=pos)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
        pos += nbytes
        out.append(ComplexImage(grid, flat.reshape(grid.dims, order="F").astype(complex)))
    if not out:
        raise FormatError(f"{path}: empty file")
    return out


def read_cimg(path) -> ComplexImage:
    return read_cimg_stack(path)[0]


def write_traj(path, traj: Trajectory) -> None:
    head = TRAJ_MAGIC + struct.pack(
        "<IIId", traj.ndim, traj.n_shots, traj.samples_per_shot, traj.dwell_time
    )
    with open(path, "wb") as f:
        f.write(head + np.asarray(traj.omega, dtype=_F64).tobytes())


def read_traj(path) -> Trajectory:
    buf = Path(path).read_bytes()
    _check_magic(buf, TRAJ_MAGIC, path)
    try:
        ndim, n_shots, sps, dwell = struct.unpack_from("<IIId", buf, 8)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    m = n_shots * sps
    off = 8 + struct.calcsize("<IIId")
    if len(buf) - off != m * ndim * 8:
        raise FormatError(f"{path}: expected {m}x{ndim} samples")
    omega = np.frombuffer(buf, dtype=_F64, offset=off).reshape(m, ndim).astype(float)
    return Trajectory(omega, n_shots, sps, dwell)


def write_table(path, table) -> None:
    t = np.asarray(table, dtype=complex)
    if t.ndim != 2:
        raise ValueError("field table must be 2-D")
    with open(path, "wb") as f:
        f.write(FLDT_MAGIC + struct.pack("<II", *t.shape) + t.astype(_C128).tobytes())


def read_table(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _check_magic(buf, FLDT_MAGIC, path)
    rows, cols = struct.unpack_from("<II", buf, 8)
    if len(buf) - 16 != rows * cols * 16:
        raise FormatError(f"{path}: expected {rows}x{cols} table")
    return np.frombuffer(buf, dtype=_C128, offset=16).reshape(rows, cols).astype(complex)


def write_kspace(path, samples) -> None:
    """Write ``(n_coils, M)`` samples as a sample-major KSPC file."""
    s = np.atleast_2d(np.asarray(samples, dtype=complex))
    n_coils, m = s.shape
    with open(path, "wb") as f:
        f.write(KSPC_MAGIC + struct.pack("<II", m, n_coils) + s.T.astype(_C128).tobytes())


def read_kspace(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _check_magic(buf, KSPC_MAGIC, path)
    m, n_coils = struct.unpack_from("<II", buf, 8)
    if len(buf) - 16 != m * n_coils * 16:
        raise FormatError(f"{path}: expected {m}x{n_coils} samples")
    data = np.frombuffer(buf, dtype=_C128, offset=16).reshape(m, n_coils)
    return data.T.astype(complex)
