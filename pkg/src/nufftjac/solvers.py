"""Iterative solvers: CG, proximal methods with an orthogonal Haar DWT, Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CgReport",
    "CgBreakdown",
    "ConvergenceWarning",
    "NonFiniteIterate",
    "cg_solve",
    "soft_threshold",
    "HaarWavelet",
    "haar_dwt",
    "haar_idwt",
    "power_iteration",
    "PogmTrace",
    "pogm_solve",
    "ista_solve",
    "cs_objective",
    "gd_step",
    "AdamState",
    "adam_step",
]


def _dot(a, b) -> float:
    """Real inner product ``Re <a, b>``."""
    return float(np.vdot(a, b).real)


@dataclass(frozen=True)
class CgReport:
    iterations: int
    residual: float
    converged: bool


class CgBreakdown(ArithmeticError):
    """Non-positive curvature ``p' F p`` met before convergence."""


class ConvergenceWarning(RuntimeWarning):
    pass


class NonFiniteIterate(FloatingPointError):
    pass


def cg_solve(apply_f, rhs, x0=None, tol: float = 1e-9, max_iters: int = 100):
    """Conjugate gradient for a Hermitian positive (semi)definite ``F``.

    Stops when ``||rhs - F x|| / ||rhs|| <= tol`` or after ``max_iters``
    iterations (``tol=0`` runs exactly ``max_iters``). Works on arrays of any
    shape. The working set is four arrays the size of ``rhs`` regardless of the
    iteration count.

    Returns
    -------
    x : ndarray
    report : CgReport
    """
    b = np.asarray(rhs)
    bnorm = math.sqrt(_dot(b, b))
    dtype = np.result_type(b.dtype, np.complex64)
    if x0 is None:
        x = np.zeros(b.shape, dtype=dtype)
        r = b.astype(dtype, copy=True)
    else:
        x = np.array(x0, dtype=dtype, copy=True)
        r = b - apply_f(x)
    if bnorm == 0:
        return np.zeros(b.shape, dtype=dtype), CgReport(0, 0.0, True)
    rho = _dot(r, r)
    res = math.sqrt(rho) / bnorm
    if res <= tol:
        return x, CgReport(0, res, True)
    p = r.copy()
    it = 0
    while it < max_iters:
        q = apply_f(p)
        curv = _dot(p, q)
        if not math.isfinite(curv):
            raise NonFiniteIterate(f"CG curvature became non-finite at iteration {it}")
        if not curv > 0:
            raise CgBreakdown(f"non-positive curvature {curv:.3e} at iteration {it}")
        alpha = rho / curv
        x += alpha * p
        r -= alpha * q
        del q
        rho_new = _dot(r, r)
        it += 1
        res = math.sqrt(rho_new) / bnorm
        if res <= tol:
            break
        p *= rho_new / rho
        p += r
        rho = rho_new
    return x, CgReport(it, res, res <= tol)


def soft_threshold(v, tau: float):
    """Complex soft thresholding ``sign(v) * max(|v| - tau, 0)``."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v)
    mag = np.abs(v)
    scale = np.maximum(mag - tau, 0) / np.where(mag > 0, mag, 1)
    return v * scale


class HaarWavelet:
    """Multi-level separable orthogonal Haar transform.

    Coefficients have the image's shape. Along an axis of odd length the last
    sample is carried into the approximation band unchanged, which keeps the
    transform square and orthogonal for every image size.
    """

    def __init__(self, levels: int = 3):
        if levels < 0:
            raise ValueError("levels must be nonnegative")
        self.levels = levels

    def _band_shapes(self, shape):
        shapes = [tuple(shape)]
        for _ in range(self.levels):
            cur = shapes[-1]
            if all(n < 2 for n in cur):
                break
            shapes.append(tuple((n + 1) // 2 for n in cur))
        return shapes

    @staticmethod
    def _fwd_axis(a, ax):
        n = a.shape[ax]
        if n < 2:
            return a
        a = np.moveaxis(a, ax, 0)
        h = n // 2
        even, odd = a[0 : 2 * h : 2], a[1 : 2 * h : 2]
        parts = [(even + odd) / math.sqrt(2)]
        if n % 2:
            parts.append(a[-1:])
        parts.append((even - odd) / math.sqrt(2))
        return np.moveaxis(np.concatenate(parts), 0, ax)

    @staticmethod
    def _inv_axis(c, ax):
        n = c.shape[ax]
        if n < 2:
            return c
        c = np.moveaxis(c, ax, 0)
        h = n // 2
        na = (n + 1) // 2
        approx, detail = c[:h], c[na:]
        out = np.empty_like(c)
        out[0 : 2 * h : 2] = (approx + detail) / math.sqrt(2)
        out[1 : 2 * h : 2] = (approx - detail) / math.sqrt(2)
        if n % 2:
            out[-1] = c[h]
        return np.moveaxis(out, 0, ax)

    def forward(self, x):
        c = np.array(x, dtype=np.result_type(np.asarray(x).dtype, float), copy=True)
        shapes = self._band_shapes(c.shape)
        for cur in shapes[:-1]:
            region = tuple(slice(0, n) for n in cur)
            band = c[region]
            for ax in range(c.ndim):
                band = self._fwd_axis(band, ax)
            c[region] = band
        return c

    def inverse(self, c):
        x = np.array(c, copy=True)
        shapes = self._band_shapes(x.shape)
        for cur in reversed(shapes[:-1]):
            region = tuple(slice(0, n) for n in cur)
            band = x[region]
            for ax in reversed(range(x.ndim)):
                band = self._inv_axis(band, ax)
            x[region] = band
        return x

    def detail_mask(self, shape) -> np.ndarray:
        """Boolean mask of detail coefficients (complement of the coarsest band)."""
        coarse = self._band_shapes(shape)[-1]
        mask = np.ones(shape, dtype=bool)
        mask[tuple(slice(0, n) for n in coarse)] = False
        return mask


def haar_dwt(x, levels: int = 3):
    return HaarWavelet(levels).forward(x)


def haar_idwt(c, levels: int = 3):
    return HaarWavelet(levels).inverse(c)


def power_iteration(apply_op, shape, iters: int = 20, seed: int = 0) -> float:
    """Largest eigenvalue estimate of a Hermitian PSD operator."""
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply_op(v)
        lam = _dot(v, w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return lam


@dataclass
class PogmTrace:
    """Iterates and frozen coefficients of one POGM run, for reverse passes."""

    lipschitz: float
    # per iteration k = 1..N: z_k = (1+c1+c2) w_k - c1 w_{k-1} - c2 x_{k-1}
    #                               + c3 (z_{k-1} - x_{k-1}),  x_k = prox_tau(z_k)
    coefs: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    xs: list = field(default_factory=list)  # x_0..x_N
    zs: list = field(default_factory=list)  # z_0..z_N


def cs_objective(apply_e, y, lam: float, wavelet: HaarWavelet, x) -> float:
    """``1/2 ||E x - y||^2 + lam ||W x||_1``."""
    r = apply_e(x) - y
    return 0.5 * _dot(r, r) + lam * float(np.sum(np.abs(wavelet.forward(x))))


def _prox_l1(wavelet, z, tau):
    return wavelet.inverse(soft_threshold(wavelet.forward(z), tau))


def pogm_solve(apply_gram, adjoint_rhs, lam: float, wavelet: HaarWavelet | None = None,
               iters: int = 40, x0=None, lipschitz: float | None = None,
               restart: bool = True, record: bool = False, power_iters: int = 20):
    """Proximal optimized gradient method for ``1/2||Ex-y||^2 + lam ||Wx||_1``.

    The data term enters through ``apply_gram(x) = E'E x`` and
    ``adjoint_rhs = E'y``. With an orthogonal ``W`` the proximal step is
    ``W' soft(W z, gamma * lam)``. Momentum is reset (``theta = 1``) whenever
    the composite gradient makes an obtuse angle with the last step.

    Returns ``x`` or ``(x, trace)`` when ``record`` is set.
    """
    wavelet = HaarWavelet() if wavelet is None else wavelet
    b = np.asarray(adjoint_rhs)
    if lipschitz is None:
        lipschitz = 1.01 * power_iteration(apply_gram, b.shape, power_iters)
    L = float(lipschitz)
    if not L > 0:
        raise ValueError("Lipschitz constant must be positive")
    x = np.zeros(b.shape, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    w_prev = x.copy()
    z = x.copy()
    theta = 1.0
    gamma = 1.0 / L
    trace = PogmTrace(L, xs=[x.copy()], zs=[z.copy()]) if record else None
    for k in range(1, iters + 1):
        if k < iters:
            theta_new = (1 + math.sqrt(1 + 4 * theta**2)) / 2
        else:
            theta_new = (1 + math.sqrt(1 + 8 * theta**2)) / 2
        gamma_new = (2 * theta + theta_new - 1) / (L * theta_new)
        c1 = (theta - 1) / theta_new
        c2 = theta / theta_new
        c3 = (theta - 1) / (L * gamma * theta_new)
        grad = apply_gram(x) - b
        w = x - grad / L
        z = w + c1 * (w - w_prev) + c2 * (w - x) + c3 * (z - x)
        x_new = _prox_l1(wavelet, z, gamma_new * lam)
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteIterate(f"POGM iterate became non-finite at iteration {k}")
        did_restart = False
        if restart and k < iters:
            composite = grad + (z - x_new) / gamma_new
            if _dot(-composite, x_new - x) < 0:
                theta_new = 1.0
                did_restart = True
        x, w_prev, theta, gamma = x_new, w, theta_new, gamma_new
        if record:
            trace.coefs.append((c1, c2, c3, gamma_new * lam))
            trace.restarts.append(did_restart)
            trace.xs.append(x.copy())
            trace.zs.append(z.copy())
    return (x, trace) if record else x


def ista_solve(apply_gram, adjoint_rhs, lam: float, wavelet: HaarWavelet | None = None,
               iters: int = 1000, x0=None, lipschitz: float | None = None):
    """Plain proximal gradient, used as a slow but simple reference."""
    wavelet = HaarWavelet() if wavelet is None else wavelet
    b = np.asarray(adjoint_rhs)
    if lipschitz is None:
        lipschitz = 1.01 * power_iteration(apply_gram, b.shape)
    x = np.zeros(b.shape, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    for _ in range(iters):
        x = _prox_l1(wavelet, x - (apply_gram(x) - b) / lipschitz, lam / lipschitz)
    return x


def gd_step(params, grad, step: float):
    return params - step * grad


@dataclass
class AdamState:
    shape: tuple
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.shape)
        if self.v is None:
            self.v = np.zeros(self.shape)


def adam_step(state: AdamState, params, grad):
    """Bias-corrected Adam update; mutates ``state`` and returns new params."""
    grad = np.asarray(grad, dtype=float)
    params = np.asarray(params, dtype=float)
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    mhat = state.m / (1 - state.beta1**state.step)
    vhat = state.v / (1 - state.beta2**state.step)
    return params - state.lr * mhat / (np.sqrt(vhat) + state.eps)
