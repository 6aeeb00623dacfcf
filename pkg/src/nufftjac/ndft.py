"""Exact non-uniform DFT by direct summation.

Everything here is O(MN) and meant as ground truth for the fast paths.
"""

from __future__ import annotations

import numpy as np

from .grid import ImageGrid, Trajectory

__all__ = [
    "DEFAULT_CAP",
    "OracleSizeError",
    "DenseOperator",
    "NdftOperator",
    "ndft_forward",
    "ndft_adjoint",
    "exact_jvp_forward",
    "fd_gradient",
    "FD_EPS",
]

DEFAULT_CAP = 2**24
FD_EPS = 1e-5
_CHUNK = 1 << 20  # matrix entries evaluated per block


class OracleSizeError(RuntimeError):
    """Raised when an exact evaluation would exceed the configured M*N cap."""


def _omega_of(traj) -> np.ndarray:
    om = traj.omega if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return om[:, None] if om.ndim == 1 else om


def _check(grid: ImageGrid, omega: np.ndarray, cap: int):
    if omega.shape[1] != grid.ndim:
        raise ValueError(f"trajectory is {omega.shape[1]}-D, grid is {grid.ndim}-D")
    if omega.shape[0] * grid.size > cap:
        raise OracleSizeError(
            f"M*N = {omega.shape[0] * grid.size} exceeds oracle cap {cap}"
        )


class DenseOperator:
    """Materialized system matrix with entries ``exp(-i omega_i . r_j)``."""

    def __init__(self, grid: ImageGrid, traj, cap: int = DEFAULT_CAP):
        omega = _omega_of(traj)
        _check(grid, omega, cap)
        self.grid = grid
        self.omega = omega
        self.entries = np.exp(-1j * (omega @ grid.points().T))

    @property
    def shape(self):
        return self.entries.shape

    def forward(self, x):
        x = np.asarray(x)
        lead = x.shape[: x.ndim - self.grid.ndim]
        flat = x.reshape(-1, self.grid.size)
        return (flat @ self.entries.T).reshape(*lead, -1)

    def adjoint(self, y):
        y = np.asarray(y)
        lead = y.shape[:-1]
        flat = y.reshape(-1, y.shape[-1])
        return (flat @ self.entries.conj()).reshape(*lead, *self.grid.dims)


class NdftOperator:
    """Exact transform evaluated blockwise so the full matrix is never stored.

    Same ``forward``/``adjoint`` interface as :class:`nufftjac.nufft.NufftPlan`,
    so it can back an encoding operator.
    """

    def __init__(self, grid: ImageGrid, traj, cap: int = DEFAULT_CAP):
        omega = _omega_of(traj)
        _check(grid, omega, cap)
        self.grid = grid
        self.omega = omega
        self._points = grid.points()
        self._dense = None
        if omega.shape[0] * grid.size <= _CHUNK:
            self._dense = np.exp(-1j * (omega @ self._points.T))

    def _blocks(self):
        if self._dense is not None:
            yield slice(None), self._dense
            return
        rows = max(1, _CHUNK // self.grid.size)
        for start in range(0, self.omega.shape[0], rows):
            sl = slice(start, start + rows)
            yield sl, np.exp(-1j * (self.omega[sl] @ self._points.T))

    def forward(self, x):
        x = np.asarray(x)
        lead = x.shape[: x.ndim - self.grid.ndim]
        flat = x.reshape(-1, self.grid.size)
        out = np.empty((flat.shape[0], self.omega.shape[0]), dtype=complex)
        for sl, block in self._blocks():
            out[:, sl] = flat @ block.T
        return out.reshape(*lead, -1)

    def adjoint(self, y):
        y = np.asarray(y)
        lead = y.shape[:-1]
        flat = y.reshape(-1, y.shape[-1])
        out = np.zeros((flat.shape[0], self.grid.size), dtype=complex)
        for sl, block in self._blocks():
            out += flat[:, sl] @ block.conj()
        return out.reshape(*lead, *self.grid.dims)


def ndft_forward(x, traj, grid: ImageGrid | None = None, cap: int = DEFAULT_CAP):
    """``y_i = sum_j exp(-i omega_i . r_j) x_j``."""
    x = np.asarray(x)
    if grid is None:
        grid = ImageGrid(x.shape)
    return NdftOperator(grid, traj, cap).forward(x.reshape(grid.dims))


def ndft_adjoint(y, traj, grid: ImageGrid, cap: int = DEFAULT_CAP):
    """``x_j = sum_i exp(+i omega_i . r_j) y_i``."""
    y = np.asarray(y)
    omega = _omega_of(traj)
    if y.shape[-1] != omega.shape[0]:
        raise ValueError(f"data length {y.shape[-1]} != M = {omega.shape[0]}")
    return NdftOperator(grid, omega, cap).adjoint(y)


def exact_jvp_forward(x, traj, d: int, grid: ImageGrid | None = None, cap: int = DEFAULT_CAP):
    """Diagonal of ``d(Ax)/d(omega_d)``: ``-i A(x * r_d)``."""
    x = np.asarray(x)
    if grid is None:
        grid = ImageGrid(x.shape)
    if not 0 <= d < grid.ndim:
        raise ValueError(f"dimension index {d} out of range for {grid.ndim}-D grid")
    return -1j * ndft_forward(x * grid.coord_array(d), traj, grid, cap)


def fd_gradient(loss, traj, eps: float = FD_EPS) -> np.ndarray:
    """Central-difference gradient of a scalar loss of the sample locations.

    ``loss`` receives a :class:`Trajectory` (built with ``check=False`` so the
    perturbation may leave the Nyquist box) and returns a real number.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not isinstance(traj, Trajectory):
        traj = Trajectory(traj, check=False)
    base = traj.omega
    grad = np.zeros_like(base)
    for idx in np.ndindex(*base.shape):
        om = base.copy()
        om[idx] += eps
        lp = loss(traj.with_omega(om, check=False))
        om[idx] -= 2 * eps
        lm = loss(traj.with_omega(om, check=False))
        grad[idx] = (lp - lm) / (2 * eps)
    return grad
