"""Shared value types and image-quality metrics.

Conventions used across the package:

* Voxel coordinates are integer-centered: index ``j`` along a dimension of
  size ``n`` sits at ``j - n // 2``.
* Sample locations ``omega`` are in radians per sample, so the Nyquist box is
  ``[-pi, pi]^D``.
* Images are kept as arrays shaped like ``grid.dims``; k-space data as
  ``(n_coils, M)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import convolve2d

__all__ = [
    "ImageGrid",
    "ComplexImage",
    "KspaceData",
    "Trajectory",
    "make_grid",
    "cartesian_omega",
    "nrmsd",
    "psnr",
    "ssim",
    "PSNR_CAP_DB",
]

PSNR_CAP_DB = 300.0


@dataclass(frozen=True)
class ImageGrid:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"grid must have 1 to 3 dimensions, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"grid dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def voxel_coords(self) -> tuple[np.ndarray, ...]:
        """Per-dimension 1-D centered coordinates."""
        return tuple(np.arange(n, dtype=float) - n // 2 for n in self.dims)

    def coord_array(self, d: int) -> np.ndarray:
        """Coordinate ``r_d`` broadcast over the full grid (shape ``dims``)."""
        shape = [1] * self.ndim
        shape[d] = self.dims[d]
        return np.broadcast_to(self.voxel_coords[d].reshape(shape), self.dims)

    @cached_property
    def coords(self) -> np.ndarray:
        """Stacked coordinates, shape ``(D, *dims)``."""
        return np.stack([self.coord_array(d) for d in range(self.ndim)])

    def points(self) -> np.ndarray:
        """Voxel centers as an ``(N, D)`` matrix in C order."""
        return self.coords.reshape(self.ndim, -1).T


def make_grid(dims) -> ImageGrid:
    if isinstance(dims, (int, np.integer)):
        dims = [dims]
    return ImageGrid(tuple(dims))


@dataclass(frozen=True)
class ComplexImage:
    grid: ImageGrid
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.size != self.grid.size:
            raise ValueError(f"image has {data.size} values, grid needs {self.grid.size}")
        data = data.reshape(self.grid.dims)
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True)
class KspaceData:
    """Multi-coil samples stored coil-major, ``samples.shape == (n_coils, M)``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim == 1:
            s = s[None]
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"k-space data must be (n_coils, M), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("k-space data contains non-finite values")
        object.__setattr__(self, "samples", s)

    @property
    def n_coils(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class Trajectory:
    """Sample locations ``omega`` (M x D, rad/sample) grouped into shots.

    ``omega`` must lie in ``[-pi, pi]``; pass ``check=False`` for oracle
    paths that evaluate the exact transform slightly outside the box.
    """

    omega: np.ndarray
    n_shots: int = 1
    samples_per_shot: int | None = None
    dwell_time: float = 4e-3
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        om = np.array(self.omega, dtype=float)
        if om.ndim == 1:
            om = om[:, None]
        if om.ndim != 2 or om.shape[0] < 1:
            raise ValueError(f"omega must be an (M, D) matrix, got shape {om.shape}")
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        m = om.shape[0]
        sps = self.samples_per_shot
        if sps is None:
            if m % self.n_shots:
                raise ValueError(f"{m} samples do not split into {self.n_shots} shots")
            sps = m // self.n_shots
        if self.n_shots * sps != m:
            raise ValueError(f"n_shots*samples_per_shot = {self.n_shots * sps} != M = {m}")
        object.__setattr__(self, "samples_per_shot", int(sps))
        if self.dwell_time <= 0:
            raise ValueError("dwell time must be positive")
        if not np.all(np.isfinite(om)):
            raise ValueError("omega contains non-finite values")
        if self.check and np.any(np.abs(om) > np.pi):
            raise ValueError("omega outside the Nyquist box [-pi, pi]")

    @property
    def n_samples(self) -> int:
        return self.omega.shape[0]

    @property
    def ndim(self) -> int:
        return self.omega.shape[1]

    @property
    def readout_times(self) -> np.ndarray:
        """Time of each sample in ms, restarting at 0 for every shot."""
        t = np.arange(self.samples_per_shot) * self.dwell_time
        return np.tile(t, self.n_shots)

    def shots(self) -> np.ndarray:
        """omega reshaped to ``(n_shots, samples_per_shot, D)``."""
        return self.omega.reshape(self.n_shots, self.samples_per_shot, self.ndim)

    def with_omega(self, omega, check: bool | None = None) -> "Trajectory":
        return Trajectory(
            omega,
            self.n_shots,
            self.samples_per_shot,
            self.dwell_time,
            check=self.check if check is None else check,
        )


def cartesian_omega(dims) -> np.ndarray:
    """Fully sampled Cartesian frequencies ``2 pi k / N`` (M = N, C order)."""
    axes = [2 * np.pi * (np.arange(n) - n // 2) / n for n in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def nrmsd(a, b) -> float:
    """Normalized root-mean-square difference ``||a - b|| / ||b||``."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    nb = np.linalg.norm(b)
    if nb == 0:
        raise ValueError("reference vector is zero")
    return float(np.linalg.norm(a - b) / nb)


def _magnitudes(x, ref):
    x = np.abs(np.asarray(x))
    ref = np.abs(np.asarray(ref))
    if x.shape != ref.shape:
        raise ValueError(f"grid mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, cap: float = PSNR_CAP_DB) -> float:
    """Peak SNR in dB on magnitudes, peak taken as ``max|ref|``."""
    x, ref = _magnitudes(x, ref)
    peak = ref.max()
    if peak == 0:
        raise ValueError("reference image is zero")
    rmse = np.sqrt(np.mean((x - ref) ** 2))
    if rmse == 0:
        return cap
    return float(min(cap, 20 * np.log10(peak / rmse)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) on magnitudes.

    The dynamic range is ``max|ref|``.
    """
    x, ref = _magnitudes(x, ref)
    if x.ndim != 2:
        raise ValueError("ssim is defined for 2-D images only")
    if min(x.shape) < 11:
        raise ValueError("ssim needs images of at least 11x11")
    w = _gaussian_window()
    c1 = (k1 * ref.max()) ** 2
    c2 = (k2 * ref.max()) ** 2

    def filt(a):
        return convolve2d(a, w, mode="valid")

    mu_x, mu_y = filt(x), filt(ref)
    sxx = filt(x * x) - mu_x**2
    syy = filt(ref * ref) - mu_y**2
    sxy = filt(x * ref) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
