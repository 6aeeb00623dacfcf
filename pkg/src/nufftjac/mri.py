"""Composite MRI system operators.

:class:`Encoding` represents ``E = sum_l diag(b_l) (I_Nc (x) A) S diag(c_l)``,
which covers the single-coil transform (no maps, no field model), SENSE
encoding (maps) and field-corrected encoding (segment tables). Because every
extra factor is diagonal on the image or on the sample side, all trajectory
Jacobians keep the single-coil form with ``A`` replaced by ``E``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ImageGrid, KspaceData, Trajectory
from .ndft import DEFAULT_CAP, NdftOperator
from .nufft import plan as make_plan

__all__ = [
    "SensitivityMaps",
    "Regularizer",
    "FieldModel",
    "Encoding",
    "sense_forward",
    "sense_adjoint",
    "regularizer_apply",
    "regularizer_gram",
    "field_forward",
    "field_tables_svd",
    "simulate_kspace",
]


@dataclass(frozen=True)
class SensitivityMaps:
    """Coil maps shaped ``(n_coils, *dims)``."""

    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=complex)
        if not np.all(np.isfinite(m)):
            raise ValueError("sensitivity maps contain non-finite values")
        object.__setattr__(self, "maps", m)

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    def normalized(self) -> "SensitivityMaps":
        rss = np.sqrt(np.sum(np.abs(self.maps) ** 2, axis=0))
        return SensitivityMaps(self.maps / np.where(rss > 0, rss, 1))


@dataclass(frozen=True)
class Regularizer:
    """``T`` for the quadratic penalty: identity or stacked first differences.

    The finite-difference null space is the constant images, so ``F = E'E +
    lam T'T`` is invertible as long as ``E`` does not annihilate constants.
    """

    kind: str = "identity"
    boundary: str = "periodic"

    def __post_init__(self):
        if self.kind not in ("identity", "finite-difference"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.boundary not in ("periodic", "zero"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def null_space(self) -> str:
        return "none" if self.kind == "identity" else "constants"

    def apply(self, x, ndim: int | None = None):
        x = np.asarray(x)
        if self.kind == "identity":
            return x
        ndim = x.ndim if ndim is None else ndim
        out = []
        for ax in range(x.ndim - ndim, x.ndim):
            if self.boundary == "periodic":
                out.append(np.roll(x, -1, axis=ax) - x)
            else:
                d = np.zeros_like(x)
                n = x.shape[ax]
                hi = [slice(None)] * x.ndim
                lo = [slice(None)] * x.ndim
                hi[ax] = slice(1, n)
                lo[ax] = slice(0, n - 1)
                d[tuple(lo)] = x[tuple(hi)] - x[tuple(lo)]
                out.append(d)
        return np.stack(out)

    def adjoint(self, t, ndim: int):
        t = np.asarray(t)
        if self.kind == "identity":
            return t
        x_ndim = t.ndim - 1
        acc = np.zeros(t.shape[1:], dtype=t.dtype)
        for i, ax in enumerate(range(x_ndim - ndim, x_ndim)):
            d = t[i]
            if self.boundary == "periodic":
                acc += np.roll(d, 1, axis=ax) - d
            else:
                n = d.shape[ax]
                lo = [slice(None)] * x_ndim
                hi = [slice(None)] * x_ndim
                lo[ax] = slice(0, n - 1)
                hi[ax] = slice(1, n)
                acc[tuple(lo)] -= d[tuple(lo)]
                acc[tuple(hi)] += d[tuple(lo)]
        return acc

    def gram(self, x, ndim: int | None = None):
        """``T'T x``; a discrete Laplacian for finite differences."""
        x = np.asarray(x)
        if self.kind == "identity":
            return x
        ndim = x.ndim if ndim is None else ndim
        return self.adjoint(self.apply(x, ndim), ndim)


def regularizer_apply(t: Regularizer, x):
    return t.apply(x)


def regularizer_gram(t: Regularizer, x):
    return t.gram(x)


@dataclass(frozen=True)
class FieldModel:
    """Segment tables for ``E_f ~ sum_l diag(b_l) A diag(c_l)``.

    ``b`` is ``(M, L)``; ``c`` is ``(L, *dims)`` (or ``(L, N)``, reshaped when
    the operator is built).
    """

    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=complex)
        c = np.asarray(self.c, dtype=complex)
        if b.ndim != 2 or b.shape[1] != c.shape[0] or b.shape[1] < 1:
            raise ValueError(f"table shapes disagree: b {b.shape}, c {c.shape}")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("field tables contain non-finite values")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def segments(self) -> int:
        return self.b.shape[1]


def field_tables_svd(fieldmap, times, segments: int) -> FieldModel:
    """Least-squares segment tables from a truncated SVD of ``exp(-i w_j t_i)``.

    Dense and O(MN); intended for small test problems.
    """
    w = np.asarray(fieldmap, dtype=float)
    t = np.asarray(times, dtype=float)
    phase = np.exp(-1j * np.outer(t, w.ravel()))
    u, s, vh = np.linalg.svd(phase, full_matrices=False)
    b = u[:, :segments] * s[:segments]
    c = vh[:segments].reshape((segments,) + w.shape)
    return FieldModel(b, c)


class Encoding:
    """Encoding operator on a fixed trajectory.

    Parameters
    ----------
    grid : ImageGrid
    traj : Trajectory or (M, D) array
    maps : SensitivityMaps or array, optional
        Coil sensitivities; without them the operator is single-coil.
    field : FieldModel, optional
    backend : {"nufft", "ndft"}
        ``"ndft"`` evaluates the exact transform (oracle).
    preset : {"high", "low"}
        NUFFT accuracy preset; ``sigma``/``width`` override it.
    """

    def __init__(self, grid: ImageGrid, traj, maps=None, field: FieldModel | None = None,
                 backend: str = "nufft", preset: str = "high", sigma=None, width=None,
                 precision: str = "double", cap: int = DEFAULT_CAP):
        self.grid = grid
        self.traj = traj if isinstance(traj, Trajectory) else None
        omega = traj.omega if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
        self.omega = omega[:, None] if omega.ndim == 1 else omega
        if isinstance(maps, SensitivityMaps):
            maps = maps.maps
        if maps is not None:
            maps = np.asarray(maps, dtype=complex)
            if maps.shape[1:] != grid.dims:
                raise ValueError(f"maps shape {maps.shape} does not match grid {grid.dims}")
        self.maps = maps
        if field is not None:
            if field.b.shape[0] != self.omega.shape[0]:
                raise ValueError(f"field b table has {field.b.shape[0]} rows, M = {self.omega.shape[0]}")
            c = field.c.reshape((field.segments,) + grid.dims)
            field = FieldModel(field.b, c)
        self.field = field
        self.backend_name = backend
        self._opts = dict(preset=preset, sigma=sigma, width=width, precision=precision, cap=cap)
        if backend == "nufft":
            self.backend = make_plan(grid, self.omega, sigma, width, precision, preset=preset)
        elif backend == "ndft":
            self.backend = NdftOperator(grid, self.omega, cap)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def with_omega(self, omega) -> "Encoding":
        """Same operator on new sample locations (field tables must still fit)."""
        if isinstance(omega, Trajectory):
            traj = omega
        elif self.traj is not None:
            traj = self.traj.with_omega(omega, check=False)
        else:
            traj = np.asarray(omega, dtype=float)
        return Encoding(self.grid, traj, self.maps, self.field, self.backend_name, **self._opts)

    @property
    def n_samples(self) -> int:
        return self.omega.shape[0]

    @property
    def n_coils(self) -> int:
        return 1 if self.maps is None else self.maps.shape[0]

    @property
    def kshape(self) -> tuple[int, int]:
        return (self.n_coils, self.n_samples)

    def _coil_images(self, x):
        # (..., *dims) -> (..., Nc, *dims)
        x = np.expand_dims(x, axis=x.ndim - self.grid.ndim)
        return x if self.maps is None else x * self.maps

    def forward(self, x):
        """``E x`` for images ``(..., *dims)``; returns ``(..., Nc, M)``."""
        x = np.asarray(x)
        nd = self.grid.ndim
        if x.shape[x.ndim - nd:] != self.grid.dims:
            raise ValueError(f"image shape {x.shape} does not match grid {self.grid.dims}")
        if self.field is None:
            return self.backend.forward(self._coil_images(x))
        out = 0
        for l in range(self.field.segments):
            out = out + self.field.b[:, l] * self.backend.forward(self._coil_images(x * self.field.c[l]))
        return out

    def adjoint(self, y):
        """``E' y`` for data ``(..., Nc, M)``; returns ``(..., *dims)``."""
        y = np.asarray(y)
        if y.shape[-2:] != self.kshape:
            if self.n_coils == 1 and y.shape[-1:] == (self.n_samples,):
                y = y[..., None, :]
            else:
                raise ValueError(f"data shape {y.shape} does not match {self.kshape}")
        if self.field is None:
            return self._combine(self.backend.adjoint(y))
        out = 0
        for l in range(self.field.segments):
            img = self._combine(self.backend.adjoint(y * self.field.b[:, l].conj()))
            out = out + img * self.field.c[l].conj()
        return out

    def _combine(self, imgs):
        coil_axis = imgs.ndim - self.grid.ndim - 1
        if self.maps is None:
            return imgs.squeeze(axis=coil_axis)
        return np.sum(imgs * self.maps.conj(), axis=coil_axis)

    def gram(self, x):
        return self.adjoint(self.forward(x))

    def dense(self) -> np.ndarray:
        """Materialize ``E`` as an ``(Nc*M, N)`` matrix (small problems only)."""
        n = self.grid.size
        eye = np.eye(n, dtype=complex).reshape((n,) + self.grid.dims)
        cols = self.forward(eye)  # (N, Nc, M)
        return cols.reshape(n, -1).T


def sense_forward(op: Encoding, x) -> KspaceData:
    return KspaceData(op.forward(x))


def sense_adjoint(op: Encoding, y):
    if isinstance(y, KspaceData):
        y = y.samples
    return op.adjoint(y)


def field_forward(op: Encoding, x):
    if op.field is None:
        raise ValueError("operator has no field model")
    return op.forward(x)


def simulate_kspace(op: Encoding, x_true, noise_sigma: float = 0.0, seed=None) -> KspaceData:
    """Noiseless ``E x_true`` plus optional complex white Gaussian noise."""
    y = op.forward(x_true)
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        y = y + noise_sigma * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) / np.sqrt(2)
    return KspaceData(y)
