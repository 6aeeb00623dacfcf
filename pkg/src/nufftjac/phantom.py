"""Deterministic test data: Shepp-Logan phantoms, coil maps and training sets.

All randomness comes from a Philox counter-based generator seeded by the
caller, so results are reproducible across platforms.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import ComplexImage, ImageGrid
from .io import read_cimg, write_cimg
from .mri import SensitivityMaps

__all__ = [
    "SHEPP_LOGAN_GEOMETRY",
    "INTENSITY_ORIGINAL",
    "INTENSITY_HIGH_CONTRAST",
    "make_rng",
    "shepp_logan",
    "sim_coils",
    "make_dataset",
    "load_dataset",
]

# center x, center y, semi-axis a, semi-axis b, rotation (degrees); unit-disk coordinates
SHEPP_LOGAN_GEOMETRY = np.array([
    [0.00, 0.0000, 0.6900, 0.920, 0.0],
    [0.00, -0.0184, 0.6624, 0.874, 0.0],
    [0.22, 0.0000, 0.1100, 0.310, -18.0],
    [-0.22, 0.0000, 0.1600, 0.410, 18.0],
    [0.00, 0.3500, 0.2100, 0.250, 0.0],
    [0.00, 0.1000, 0.0460, 0.046, 0.0],
    [0.00, -0.1000, 0.0460, 0.046, 0.0],
    [-0.08, -0.6050, 0.0460, 0.023, 0.0],
    [0.00, -0.6060, 0.0230, 0.023, 0.0],
    [0.06, -0.6050, 0.0230, 0.046, 0.0],
])
INTENSITY_ORIGINAL = np.array([2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01])
# Toft's modified intensities: better contrast, values in [0, 1]
INTENSITY_HIGH_CONTRAST = np.array([1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator; ``seed`` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def _rasterize(dims, geometry, intensity):
    ny, nx = dims
    # voxel centers in [-1, 1); y points up
    xs = (np.arange(nx) - nx // 2) / (nx / 2)
    ys = -(np.arange(ny) - ny // 2) / (ny / 2)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    img = np.zeros(dims)
    for (cx, cy, a, b, phi), rho in zip(geometry, intensity):
        t = np.deg2rad(phi)
        dx, dy = xx - cx, yy - cy
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1] += rho
    return img


def _smooth_phase(dims, rng, order: int = 2):
    """Low-order polynomial phase with coefficients drawn in [-pi, pi]."""
    axes = [np.linspace(-1, 1, n) for n in dims]
    grids = np.meshgrid(*axes, indexing="ij")
    phase = np.zeros(dims)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            phase += rng.uniform(-np.pi, np.pi) / (1 + i + j) * grids[0] ** i * grids[1] ** j
    return phase


def shepp_logan(grid: ImageGrid, seed=None, phase=False, high_contrast: bool = True,
                jitter: float = 0.0, crop_from=None) -> ComplexImage:
    """Rasterized 10-ellipse Shepp-Logan phantom.

    Parameters
    ----------
    grid : ImageGrid
        Must be 2-D.
    seed : int, optional
        Seeds phase and jitter draws.
    phase : bool or {"voxel", "smooth"}
        ``True``/``"voxel"`` multiplies each voxel by ``exp(i phi)`` with
        ``phi ~ U[-pi, pi]``; ``"smooth"`` uses a random low-order polynomial
        phase instead.
    high_contrast : bool
        Use the modified intensity table (values in [0, 1]) rather than the
        original one.
    jitter : float
        Relative random perturbation of every ellipse's center, axes and
        intensity, drawn uniformly in ``[-jitter, jitter]``.
    crop_from : tuple of int, optional
        Rasterize on this larger grid and return its central ``grid.dims``
        patch.
    """
    if grid.ndim != 2:
        raise ValueError(f"Shepp-Logan phantom needs a 2-D grid, got {grid.ndim}-D")
    rng = make_rng(0 if seed is None else seed)
    geom = SHEPP_LOGAN_GEOMETRY.copy()
    rho = (INTENSITY_HIGH_CONTRAST if high_contrast else INTENSITY_ORIGINAL).copy()
    if jitter > 0:
        n = len(rho)
        geom[:, :2] += jitter * rng.uniform(-1, 1, (n, 2))
        geom[:, 2:4] *= 1 + jitter * rng.uniform(-1, 1, (n, 2))
        rho *= 1 + jitter * rng.uniform(-1, 1, n)
    full = tuple(crop_from) if crop_from is not None else grid.dims
    if any(f < d for f, d in zip(full, grid.dims)):
        raise ValueError(f"crop source {full} smaller than grid {grid.dims}")
    img = _rasterize(full, geom, rho)
    if full != grid.dims:
        start = [(f - d) // 2 for f, d in zip(full, grid.dims)]
        img = img[start[0]:start[0] + grid.dims[0], start[1]:start[1] + grid.dims[1]]
    img = img.astype(complex)
    if phase is True or phase == "voxel":
        img *= np.exp(1j * rng.uniform(-np.pi, np.pi, grid.dims))
    elif phase == "smooth":
        img *= np.exp(1j * _smooth_phase(grid.dims, rng))
    elif phase not in (False, None):
        raise ValueError(f"unknown phase mode {phase!r}")
    return ComplexImage(grid, img)


def sim_coils(grid: ImageGrid, n_coils: int = 8, seed=0, radius: float = 1.2,
              width: float = 0.9) -> SensitivityMaps:
    """Smooth Gaussian-lobe coil maps on a ring around the field of view.

    Lobe ``c`` is centered at angle ``2 pi c / n_coils`` on a circle of
    ``radius`` (in half-FOV units) with a seeded linear phase. Maps are
    normalized to unit root-sum-square at every voxel.
    """
    if n_coils < 1:
        raise ValueError("need at least one coil")
    rng = make_rng(seed)
    axes = [(np.arange(n) - n // 2) / (n / 2) for n in grid.dims]
    pos = np.stack(np.meshgrid(*axes, indexing="ij"))
    maps = np.empty((n_coils,) + grid.dims, dtype=complex)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils
        center = np.zeros(grid.ndim)
        center[:2] = radius * np.array([np.cos(ang), np.sin(ang)])[: min(2, grid.ndim)]
        d2 = sum((pos[d] - center[d]) ** 2 for d in range(grid.ndim))
        tilt = rng.uniform(-0.5, 0.5, grid.ndim)
        ph = ang + sum(tilt[d] * pos[d] for d in range(grid.ndim))
        maps[c] = np.exp(-d2 / (2 * width**2)) * np.exp(1j * ph)
    return SensitivityMaps(maps).normalized()


def make_dataset(n: int, grid: ImageGrid, seed: int = 0, out_dir=None,
                 jitter: float = 0.05, phase="smooth"):
    """Generate ``n`` jittered phantoms; optionally write them with a manifest.

    Returns ``(images, manifest)`` where ``images`` is an ``(n, *dims)``
    array. Files are named ``phantom_0000.cimg`` and so on, next to
    ``manifest.json``.
    """
    if n < 1:
        raise ValueError("dataset needs at least one image")
    children = np.random.SeedSequence(seed).spawn(n)
    imgs = np.stack([
        shepp_logan(grid, seed=ss, phase=phase, jitter=jitter).data for ss in children
    ])
    manifest = {
        "seed": int(seed),
        "grid": list(grid.dims),
        "count": int(n),
        "jitter": float(jitter),
        "phase": phase if isinstance(phase, str) else bool(phase),
        "files": [f"phantom_{i:04d}.cimg" for i in range(n)],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, img in zip(manifest["files"], imgs):
            write_cimg(out / name, ComplexImage(grid, img))
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return imgs, manifest


def load_dataset(directory):
    """Read a directory written by :func:`make_dataset`; returns ``(images, manifest)``."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    imgs = np.stack([read_cimg(d / f).data for f in manifest["files"]])
    return imgs, manifest
