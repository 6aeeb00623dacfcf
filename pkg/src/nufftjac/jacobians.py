"""Trajectory and image Jacobians of NUFFT-based operators.

All products are built from forward/adjoint applications of an
:class:`~nufftjac.mri.Encoding` ``E`` (single-coil, SENSE or field-corrected):

* forward ``E x``:        ``d(Ex)/d omega_d = -i diag(E(x * r_d))``
* adjoint ``E' y``:       ``d(E'y)/d omega_d = i diag(r_d) E' diag(y)``
* Gram ``E'E x``:         ``-i E' diag(E(x * r_d)) + i diag(r_d) E' diag(E x)``
* PSD inverse ``F^-1 x``: ``-F^-1 (dF/d omega_d) F^-1 x`` with ``F = E'E + lam T'T``

Cotangent convention: a cotangent ``v`` of a complex quantity ``s`` is the
real gradient ``dL/dRe(s) + i dL/dIm(s)`` (twice the conjugate Wirtinger
derivative). With it every VJP is the transpose of its JVP in the real inner
product, ``<u, vjp(v)> = Re <v, jvp(u)>``, and an omega-VJP is
``Re{conj(J) * v}`` summed over coils.
"""

from __future__ import annotations

import tracemalloc
import warnings
from dataclasses import dataclass

import numpy as np

from .mri import Encoding, Regularizer
from .solvers import ConvergenceWarning, cg_solve

__all__ = [
    "WirtingerGrad",
    "forward_jvp_omega",
    "forward_vjp_omega",
    "forward_vjp_x",
    "adjoint_jvp_omega",
    "adjoint_vjp_omega",
    "adjoint_vjp_y",
    "gram_jvp_omega",
    "gram_vjp_omega",
    "gram_vjp_x",
    "psd_normal_op",
    "psd_inverse_apply",
    "psd_inverse_jvp_omega",
    "psd_inverse_vjp_omega",
    "psd_inverse_vjp_x",
    "unrolled_cg_inverse_vjp",
    "probe_loss",
    "probe_gradients",
    "PROBE_KINDS",
    "peak_aux_vectors",
]

JACOBIAN_CG_TOL = 1e-9
JACOBIAN_CG_MAXITER = 100


@dataclass(frozen=True)
class WirtingerGrad:
    """Gradient of a real loss: ``dL/dx*`` and the real ``dL/d omega`` (M x D)."""

    wrt_x_conj: np.ndarray
    wrt_omega: np.ndarray


def _weighted(op: Encoding, x):
    """``x * r_d`` stacked over d: shape ``(D, *dims)``."""
    return np.asarray(x)[None] * op.grid.coords


def _check_u(op: Encoding, u):
    u = np.asarray(u, dtype=float)
    if u.shape != op.omega.shape:
        raise ValueError(f"direction shape {u.shape} != omega shape {op.omega.shape}")
    return u


def _check_k(op: Encoding, v):
    v = np.asarray(v)
    if v.shape == (op.n_samples,) and op.n_coils == 1:
        v = v[None]
    if v.shape != op.kshape:
        raise ValueError(f"k-space shape {v.shape} != {op.kshape}")
    return v


def _check_img(op: Encoding, x):
    x = np.asarray(x)
    if x.shape != op.grid.dims:
        raise ValueError(f"image shape {x.shape} != grid {op.grid.dims}")
    return x


def _reduce(p, v):
    """``Re sum_c conj(-i p_d) v`` for p shaped (D, Nc, M) -> (M, D)."""
    return np.sum((1j * p.conj() * v[None]).real, axis=1).T


# -- forward operator ---------------------------------------------------------

def forward_jvp_omega(op: Encoding, x, u):
    """Directional derivative of ``E x`` along ``u`` (M x D)."""
    x = _check_img(op, x)
    u = _check_u(op, u)
    p = op.forward(_weighted(op, x))  # (D, Nc, M)
    return -1j * np.einsum("md,dcm->cm", u, p)


def forward_vjp_omega(op: Encoding, x, v):
    """``Re{conj(-i E(x * r_d)) * v}`` per column d, coil-summed."""
    x = _check_img(op, x)
    v = _check_k(op, v)
    return _reduce(op.forward(_weighted(op, x)), v)


def forward_vjp_x(op: Encoding, v):
    return op.adjoint(_check_k(op, v))


# -- adjoint operator ---------------------------------------------------------

def adjoint_jvp_omega(op: Encoding, y, u):
    """``sum_d i r_d * E'(u_d * y)``."""
    y = _check_k(op, y)
    u = _check_u(op, u)
    q = u.T[:, None, :] * y[None]  # (D, Nc, M)
    return 1j * np.sum(op.grid.coords * op.adjoint(q), axis=0)


def adjoint_vjp_omega(op: Encoding, y, v):
    """Transpose of :func:`adjoint_jvp_omega`: ``Re{conj(-i E(r_d * v)) * y}``."""
    y = _check_k(op, y)
    v = _check_img(op, v)
    return _reduce(op.forward(_weighted(op, v)), y)


def adjoint_vjp_y(op: Encoding, v):
    return op.forward(_check_img(op, v))


# -- Gram operator ------------------------------------------------------------

def gram_jvp_omega(op: Encoding, x, u):
    x = _check_img(op, x)
    u = _check_u(op, u)
    ex = op.forward(x)
    exr = op.forward(_weighted(op, x))  # (D, Nc, M)
    first = op.adjoint(np.einsum("md,dcm->cm", u, exr))
    second = np.sum(op.grid.coords * op.adjoint(u.T[:, None, :] * ex[None]), axis=0)
    return -1j * first + 1j * second


def gram_vjp_omega(op: Encoding, x, v):
    """Transpose of :func:`gram_jvp_omega`.

    Column d is ``Re{ -i conj(E v) E(x r_d) + i conj(E(v r_d)) E x }``,
    four forward transforms per dimension pair and no adjoints.
    """
    x = _check_img(op, x)
    v = _check_img(op, v)
    ev = op.forward(v)
    ex = op.forward(x)
    exr = op.forward(_weighted(op, x))
    evr = op.forward(_weighted(op, v))
    t1 = -1j * ev.conj()[None] * exr
    t2 = 1j * evr.conj() * ex[None]
    return np.sum((t1 + t2).real, axis=1).T


def gram_vjp_x(op: Encoding, v):
    return op.gram(_check_img(op, v))


# -- PSD inverse --------------------------------------------------------------

def psd_normal_op(op: Encoding, lam: float, reg: Regularizer | None = None):
    """``F(x) = E'E x + lam T'T x``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    reg = Regularizer() if reg is None else reg
    nd = op.grid.ndim

    def apply(x):
        return op.gram(x) + lam * reg.gram(x, nd)

    return apply


def psd_inverse_apply(op: Encoding, lam: float, reg: Regularizer | None, x,
                      tol: float = JACOBIAN_CG_TOL, max_iters: int = JACOBIAN_CG_MAXITER,
                      x0=None):
    """``z = (E'E + lam T'T)^-1 x`` by CG; returns ``(z, CgReport)``.

    Warns with :class:`ConvergenceWarning` when the tolerance is not met.
    """
    x = _check_img(op, x)
    z, rep = cg_solve(psd_normal_op(op, lam, reg), x, x0=x0, tol=tol, max_iters=max_iters)
    if not rep.converged and tol > 0:
        warnings.warn(
            f"CG stopped after {rep.iterations} iterations at residual {rep.residual:.2e}",
            ConvergenceWarning, stacklevel=2,
        )
    return z, rep


def psd_inverse_jvp_omega(op: Encoding, lam, reg, x, u, z=None, **cg):
    z = psd_inverse_apply(op, lam, reg, x, **cg)[0] if z is None else z
    return -psd_inverse_apply(op, lam, reg, gram_jvp_omega(op, z, u), **cg)[0]


def psd_inverse_vjp_omega(op: Encoding, lam: float, reg: Regularizer | None, x, v,
                          z=None, **cg):
    """omega-VJP of ``F^-1 x``: ``-gram_vjp(z, F^-1 v)`` with ``z = F^-1 x``.

    Uses two CG solves and a fixed number of image/k-space vectors, whatever
    the CG iteration count.
    """
    v = _check_img(op, v)
    if z is None:
        z = psd_inverse_apply(op, lam, reg, x, **cg)[0]
    w = psd_inverse_apply(op, lam, reg, v, **cg)[0]
    return -gram_vjp_omega(op, z, w)


def psd_inverse_vjp_x(op: Encoding, lam, reg, v, **cg):
    return psd_inverse_apply(op, lam, reg, v, **cg)[0]


def unrolled_cg_inverse_vjp(op: Encoding, lam: float, reg: Regularizer | None, x, v,
                            iters: int):
    """Reverse-mode differentiation through ``iters`` stored CG iterations.

    The reference for what automatic differentiation of an unrolled solver
    does: every iterate is kept, so storage grows linearly with ``iters``.
    Returns ``(z_K, omega-VJP, x-VJP)``.
    """
    x = _check_img(op, x)
    v = _check_img(op, v)
    apply_f = psd_normal_op(op, lam, reg)
    r = x.astype(complex)
    xk = np.zeros_like(r)
    p = r.copy()
    rho = [np.vdot(r, r).real]
    tape = []  # (p_k, q_k, r_{k+1}, alpha_k, sigma_k, beta_k)
    rs = [r]
    for _ in range(iters):
        q = apply_f(p)
        sigma = np.vdot(p, q).real
        alpha = rho[-1] / sigma
        xk = xk + alpha * p
        r = r - alpha * q
        rho.append(np.vdot(r, r).real)
        beta = rho[-1] / rho[-2]
        tape.append((p, q, alpha, sigma, beta))
        rs.append(r)
        p = r + beta * p

    # reverse sweep (real-gradient cotangents)
    g_omega = np.zeros_like(op.omega)
    xbar = v.astype(complex)
    rbar = np.zeros_like(r)
    pbar = np.zeros_like(r)
    rhobar = [0.0] * (iters + 1)
    for k in reversed(range(iters)):
        pk, qk, alpha, sigma, beta = tape[k]
        # p_{k+1} = r_{k+1} + beta p_k
        rbar = rbar + pbar
        betabar = np.vdot(pbar, pk).real
        pbar_k = beta * pbar
        rhobar[k + 1] += betabar / rho[k]
        rhobar[k] -= betabar * rho[k + 1] / rho[k] ** 2
        # rho_{k+1} = |r_{k+1}|^2
        rbar = rbar + 2 * rhobar[k + 1] * rs[k + 1]
        # r_{k+1} = r_k - alpha q_k ; x_{k+1} = x_k + alpha p_k
        alphabar = -np.vdot(rbar, qk).real + np.vdot(xbar, pk).real
        qbar = -alpha * rbar
        pbar_k = pbar_k + alpha * xbar
        # alpha = rho_k / sigma_k ; sigma_k = Re<p_k, q_k>
        rhobar[k] += alphabar / sigma
        sigmabar = -alphabar * rho[k] / sigma**2
        pbar_k = pbar_k + sigmabar * qk
        qbar = qbar + sigmabar * pk
        # q_k = F p_k
        pbar_k = pbar_k + apply_f(qbar)
        g_omega += gram_vjp_omega(op, pk, qbar)
        pbar = pbar_k
    # p_0 = r_0, rho_0 = |r_0|^2, r_0 = x (zero initial guess)
    rbar = rbar + pbar + 2 * rhobar[0] * rs[0]
    return xk, g_omega, rbar


# -- scalar probes L = ||f||^2 ------------------------------------------------

PROBE_KINDS = ("forward", "adjoint", "gram", "inverse")


def probe_loss(kind: str, op: Encoding, inp, lam: float = 1.0, reg=None, **cg) -> float:
    """``||f(inp)||^2`` for f = forward, adjoint, Gram or PSD inverse."""
    if kind == "forward":
        f = op.forward(inp)
    elif kind == "adjoint":
        f = op.adjoint(inp)
    elif kind == "gram":
        f = op.gram(inp)
    elif kind == "inverse":
        f = psd_inverse_apply(op, lam, reg, inp, **cg)[0]
    else:
        raise ValueError(f"unknown probe kind {kind!r}")
    return float(np.vdot(f, f).real)


def probe_gradients(kind: str, op: Encoding, inp, lam: float = 1.0, reg=None, **cg) -> WirtingerGrad:
    """Analytic gradients of ``||f(inp)||^2`` w.r.t. ``inp*`` and omega."""
    if kind == "forward":
        f = op.forward(inp)
        return WirtingerGrad(op.adjoint(f), forward_vjp_omega(op, inp, 2 * f))
    if kind == "adjoint":
        f = op.adjoint(inp)
        return WirtingerGrad(op.forward(f), adjoint_vjp_omega(op, inp, 2 * f))
    if kind == "gram":
        f = op.gram(inp)
        return WirtingerGrad(op.gram(f), gram_vjp_omega(op, inp, 2 * f))
    if kind == "inverse":
        z = psd_inverse_apply(op, lam, reg, inp, **cg)[0]
        w = psd_inverse_apply(op, lam, reg, z, **cg)[0]
        return WirtingerGrad(w, -gram_vjp_omega(op, z, 2 * w))
    raise ValueError(f"unknown probe kind {kind!r}")


def peak_aux_vectors(fn, vector_bytes: int, *args, max_runs: int = 100, **kwargs):
    """Steady-state peak of fresh allocations made by ``fn(*args, **kwargs)``.

    ``fn`` is rerun under tracemalloc until a run leaves no retained
    allocations behind, so lazily grown interpreter and FFT caches have
    reached their steady size and do not pollute the count. Returns
    ``(result, peak_vectors, peak_bytes)`` where ``peak_vectors`` is the peak
    divided by the size of one image vector, rounded to the nearest integer.
    """
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    try:
        prev_end = None
        for _ in range(max_runs):
            tracemalloc.reset_peak()
            base = tracemalloc.get_traced_memory()[0]
            out = fn(*args, **kwargs)
            peak = tracemalloc.get_traced_memory()[1] - base
            del out
            end = tracemalloc.get_traced_memory()[0]
            if prev_end is not None and end <= prev_end:
                break
            prev_end = end
        out = fn(*args, **kwargs)
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return out, int(round(peak / vector_bytes)), peak
