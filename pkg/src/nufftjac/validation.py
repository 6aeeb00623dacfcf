"""Accuracy and cost reports: finite-difference, transpose-pairing and oracle suites.

Each suite returns a plain dict that serializes to JSON, with per-case error
tables plus a ``passed`` flag evaluated against the thresholds listed in
``THRESHOLDS``.
"""

from __future__ import annotations

import time
import warnings

import numpy as np

from .grid import ImageGrid, Trajectory, cartesian_omega, nrmsd
from .jacobians import (
    adjoint_jvp_omega,
    adjoint_vjp_omega,
    forward_jvp_omega,
    forward_vjp_omega,
    gram_jvp_omega,
    gram_vjp_omega,
    peak_aux_vectors,
    probe_gradients,
    probe_loss,
    psd_inverse_apply,
    psd_inverse_jvp_omega,
    psd_inverse_vjp_omega,
    unrolled_cg_inverse_vjp,
)
from .mri import Encoding, Regularizer
from .ndft import FD_EPS, NdftOperator, fd_gradient
from .nufft import PRESETS, gram_apply, plan, toeplitz_apply, toeplitz_build
from .phantom import make_rng, shepp_logan, sim_coils
from .solvers import ConvergenceWarning, power_iteration

__all__ = [
    "THRESHOLDS",
    "spoke",
    "probe_setup",
    "jacobian_suite",
    "adjoint_suite",
    "oracle_suite",
    "bench",
]

THRESHOLDS = {
    "fd_ndft": 1e-4,
    "fd_nufft": 1e-4,
    "wirtinger": 1e-6,
    "pairing": 1e-10,
    "oracle_nrmsd": 1e-4,
    "toeplitz_nrmsd": 1e-5,
    "cartesian_gram": 1e-6,
}
INVERSE_CG_ITERS = 20
INVERSE_CG_TOL = 1e-9
CROP_SOURCE = (128, 128)


def spoke(n_points: int, angle: float) -> np.ndarray:
    """One diametric spoke of cell-centered samples at ``angle``."""
    r = -np.pi + (np.arange(n_points) + 0.5) * 2 * np.pi / n_points
    return np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)


def probe_setup(size: int, seed: int, n_coils: int = 8):
    """Test geometry: phase-scrambled phantom patch, coil maps, one ``2*size`` spoke.

    Returns ``(grid, x, omega, maps, y)``; ``y`` is random k-space data.
    """
    rng = make_rng(seed)
    grid = ImageGrid((size, size))
    src = tuple(max(s, size) for s in CROP_SOURCE)
    x = shepp_logan(grid, seed=seed, phase=True, crop_from=src).data
    omega = spoke(2 * size, rng.uniform(0, np.pi))
    maps = sim_coils(grid, n_coils, seed).maps
    y = rng.standard_normal((n_coils, omega.shape[0])) + 1j * rng.standard_normal((n_coils, omega.shape[0]))
    return grid, x, omega, maps, y


def _rel(a, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def jacobian_suite(size: int = 40, seed: int = 1, n_coils: int = 8, preset: str = "high",
                   eps: float = FD_EPS, n_wirtinger: int = 8, keep_profiles: bool = False):
    """omega-gradients of ``||f||^2`` probes vs central differences of the exact loss.

    Probes are the forward, adjoint, Gram and regularized-inverse operators.
    The inverse uses ``INVERSE_CG_ITERS`` CG iterations at ``INVERSE_CG_TOL``
    with ``lam`` equal to the largest eigenvalue of ``E'E``, which keeps the
    system well enough conditioned for that budget. x-gradients are checked
    through ``dL/da = 2 Re(dL/dz*)`` and ``dL/db = 2 Im(dL/dz*)``.
    """
    t0 = time.perf_counter()
    grid, x, omega, maps, y = probe_setup(size, seed, n_coils)
    traj = Trajectory(omega)
    exact = Encoding(grid, traj, maps=maps, backend="ndft")
    fast = Encoding(grid, traj, maps=maps, preset=preset)
    lam = power_iteration(exact.gram, grid.dims, 30, seed=seed)
    cases, profiles = [], {}
    for kind, inp in (("forward", x), ("adjoint", y), ("gram", x), ("inverse", x)):
        kw = dict(lam=lam, max_iters=INVERSE_CG_ITERS, tol=INVERSE_CG_TOL) if kind == "inverse" else {}
        tight = dict(lam=lam, max_iters=500, tol=1e-13) if kind == "inverse" else {}
        fd = fd_gradient(lambda t: probe_loss(kind, exact.with_omega(t.omega), inp, **tight), traj, eps)
        g_exact = probe_gradients(kind, exact, inp, **kw).wrt_omega
        g_fast = probe_gradients(kind, fast, inp, **kw).wrt_omega
        cases.append({
            "probe": kind,
            "fd_rel_err_ndft": _rel(g_exact, fd),
            "fd_rel_err_nufft": _rel(g_fast, fd),
            "nufft_vs_ndft_nrmsd": nrmsd(g_fast, g_exact),
        })
        if keep_profiles:
            profiles[kind] = {"fd": fd[:, 0], "ndft": g_exact[:, 0], "nufft": g_fast[:, 0]}

    # Wirtinger identity on a few voxels of the forward and Gram probes
    rng = make_rng(seed + 7919)
    idx = rng.choice(grid.size, size=min(n_wirtinger, grid.size), replace=False)
    wirt = []
    for kind in ("forward", "gram"):
        gx = probe_gradients(kind, exact, x).wrt_x_conj.ravel()
        h = 1e-6
        for j in idx:
            for part, unit in (("re", 1.0), ("im", 1j)):
                xp = x.ravel().copy()
                xm = x.ravel().copy()
                xp[j] += h * unit
                xm[j] -= h * unit
                fd = (probe_loss(kind, exact, xp.reshape(grid.dims))
                      - probe_loss(kind, exact, xm.reshape(grid.dims))) / (2 * h)
                an = 2 * (gx[j].real if part == "re" else gx[j].imag)
                wirt.append(abs(fd - an) / max(abs(an), 1e-300))
    report = {
        "suite": "jacobians",
        "size": size,
        "seed": seed,
        "n_coils": n_coils,
        "n_samples": int(omega.shape[0]),
        "preset": preset,
        "eps": eps,
        "lam_inverse": lam,
        "cases": cases,
        "wirtinger_max_rel_err": float(max(wirt)),
        "seconds": time.perf_counter() - t0,
    }
    report["passed"] = bool(
        all(c["fd_rel_err_ndft"] <= THRESHOLDS["fd_ndft"] for c in cases)
        and all(c["fd_rel_err_nufft"] <= THRESHOLDS["fd_nufft"] for c in cases)
        and report["wirtinger_max_rel_err"] <= THRESHOLDS["wirtinger"]
    )
    return (report, profiles) if keep_profiles else report


def _pairing_error(u, vjp, v, jvp) -> float:
    lhs = float(np.sum(u * vjp))
    rhs = float(np.vdot(v, jvp).real)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def adjoint_suite(size: int = 12, seed: int = 0, n_probes: int = 50, n_coils: int = 4,
                  preset: str = "high"):
    """Transpose pairing ``<u, VJP(v)> = Re<v, JVP(u)>`` on random probes.

    Covers the forward, adjoint, Gram and regularized-inverse omega-Jacobians
    plus the NUFFT adjoint itself (``<Ax, y> = <x, A'y>``).
    """
    t0 = time.perf_counter()
    rng = make_rng(seed)
    grid = ImageGrid((size, size))
    m = 3 * size
    errs = {k: [] for k in ("nufft_adjoint", "forward", "adjoint", "gram", "inverse")}
    reg = Regularizer("finite-difference")
    for _ in range(n_probes):
        omega = rng.uniform(-np.pi, np.pi, (m, 2))
        maps = rng.standard_normal((n_coils,) + grid.dims) + 1j * rng.standard_normal((n_coils,) + grid.dims)
        op = Encoding(grid, omega, maps=maps, preset=preset)

        def cimg():
            return rng.standard_normal(grid.dims) + 1j * rng.standard_normal(grid.dims)

        def ck():
            return rng.standard_normal(op.kshape) + 1j * rng.standard_normal(op.kshape)

        u = rng.standard_normal(omega.shape)
        x, v, y, w = cimg(), cimg(), ck(), ck()
        ax = op.forward(x)
        errs["nufft_adjoint"].append(
            abs(np.vdot(y, ax) - np.vdot(op.adjoint(y), x)) / abs(np.vdot(y, ax)))
        errs["forward"].append(_pairing_error(u, forward_vjp_omega(op, x, w), w, forward_jvp_omega(op, x, u)))
        errs["adjoint"].append(_pairing_error(u, adjoint_vjp_omega(op, y, v), v, adjoint_jvp_omega(op, y, u)))
        errs["gram"].append(_pairing_error(u, gram_vjp_omega(op, x, v), v, gram_jvp_omega(op, x, u)))
        lam = 0.1 * power_iteration(op.gram, grid.dims, 10)
        cg = dict(tol=1e-14, max_iters=400)
        z = _quiet_inverse(op, lam, reg, x, cg)
        errs["inverse"].append(_pairing_error(
            u, psd_inverse_vjp_omega(op, lam, reg, x, v, z=z, **cg), v,
            psd_inverse_jvp_omega(op, lam, reg, x, u, z=z, **cg)))
    table = {k: float(max(e)) for k, e in errs.items()}
    return {
        "suite": "adjoints",
        "size": size,
        "seed": seed,
        "n_probes": n_probes,
        "max_rel_pairing_error": table,
        "seconds": time.perf_counter() - t0,
        "passed": bool(all(e <= THRESHOLDS["pairing"] for e in table.values())),
    }


def _quiet_inverse(op, lam, reg, x, cg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return psd_inverse_apply(op, lam, reg, x, **cg)[0]


def oracle_suite(size: int = 40, seed: int = 0, n_instances: int = 20, n_coils: int = 8):
    """Fast transforms against the exact NUDFT.

    Per instance: multi-coil forward and adjoint nrmsd at both presets.
    Also reports the Toeplitz Gram against the exact Gram and the
    fully sampled Cartesian Gram against ``N I``.
    """
    t0 = time.perf_counter()
    rows = []
    timings = {p: 0.0 for p in PRESETS}
    for i in range(n_instances):
        grid, x, omega, maps, y = probe_setup(size, seed + i, n_coils)
        exact = Encoding(grid, omega, maps=maps, backend="ndft")
        ref_f = exact.forward(x)
        ref_a = exact.adjoint(y)
        row = {"instance": i}
        for name in PRESETS:
            op = Encoding(grid, omega, maps=maps, preset=name)
            ts = time.perf_counter()
            f = op.forward(x)
            a = op.adjoint(y)
            timings[name] += time.perf_counter() - ts
            row[f"forward_{name}"] = nrmsd(f, ref_f)
            row[f"adjoint_{name}"] = nrmsd(a, ref_a)
        rows.append(row)

    # Gram consistency on a denser single-coil trajectory
    rng = make_rng(seed)
    grid = ImageGrid((size, size))
    omega = np.concatenate([spoke(2 * size, a) for a in np.pi * np.arange(8) / 8])
    x = rng.standard_normal(grid.dims) + 1j * rng.standard_normal(grid.dims)
    p = plan(grid, omega, preset="high")
    kern = toeplitz_build(p)
    exact_gram = NdftOperator(grid, omega)
    g_exact = exact_gram.adjoint(exact_gram.forward(x))
    g_toep = toeplitz_apply(kern, x)
    g_direct = gram_apply(p, x)
    cart = cartesian_omega(grid.dims)
    kc = toeplitz_build(plan(grid, cart, preset="high"))
    g_cart = toeplitz_apply(kc, x)

    worst = {k: float(max(r[k] for r in rows)) for k in rows[0] if k != "instance"}
    report = {
        "suite": "oracle",
        "size": size,
        "seed": seed,
        "n_instances": n_instances,
        "n_coils": n_coils,
        "cases": rows,
        "worst": worst,
        "transform_seconds": timings,
        "toeplitz_vs_exact_nrmsd": nrmsd(g_toep, g_exact),
        "toeplitz_vs_direct_nrmsd": nrmsd(g_toep, g_direct),
        "direct_vs_exact_nrmsd": nrmsd(g_direct, g_exact),
        "cartesian_gram_vs_NI": nrmsd(g_cart, grid.size * x),
        "seconds": time.perf_counter() - t0,
    }
    report["passed"] = bool(
        worst["forward_high"] <= THRESHOLDS["oracle_nrmsd"]
        and worst["adjoint_high"] <= THRESHOLDS["oracle_nrmsd"]
        and report["toeplitz_vs_exact_nrmsd"] <= THRESHOLDS["toeplitz_nrmsd"]
        and report["cartesian_gram_vs_NI"] <= THRESHOLDS["cartesian_gram"]
    )
    return report


BENCH_SIZES = {"small": (40, 16), "large": (128, 32)}


def bench(op_name: str = "inverse", size: str = "small", cg_iters: int = 20, seed: int = 0,
          n_coils: int = 8, preset: str = "high", repeats: int = 3, naive: bool = False):
    """Wall time and peak auxiliary allocation of one Gram or inverse-Jacobian product.

    ``size`` selects a square image and a number of radial spokes
    (``small``: 40x40 with 16 spokes, ``large``: 128x128 with 32 spokes).
    Peak allocation is counted in image-sized complex vectors. With
    ``naive=True`` the inverse benchmark also runs the store-every-iterate
    reverse pass for comparison.
    """
    if op_name not in ("gram", "inverse"):
        raise ValueError(f"unknown bench op {op_name!r}")
    if size not in BENCH_SIZES:
        raise ValueError(f"unknown bench size {size!r}")
    n, n_spokes = BENCH_SIZES[size]
    rng = make_rng(seed)
    grid = ImageGrid((n, n))
    omega = np.concatenate([spoke(2 * n, a) for a in np.pi * np.arange(n_spokes) / n_spokes])
    maps = sim_coils(grid, n_coils, seed).maps
    op = Encoding(grid, omega, maps=maps, preset=preset)
    x = rng.standard_normal(grid.dims) + 1j * rng.standard_normal(grid.dims)
    v = rng.standard_normal(grid.dims) + 1j * rng.standard_normal(grid.dims)
    vec_bytes = grid.size * 16
    lam = 1e-3 * power_iteration(op.gram, grid.dims, 20, seed=seed)
    reg = Regularizer()
    cg = dict(tol=0.0, max_iters=cg_iters)
    out = {"op": op_name, "size": size, "dims": list(grid.dims), "n_samples": int(omega.shape[0]),
           "n_coils": n_coils, "preset": preset, "cg_iters": cg_iters}
    if op_name == "gram":
        fn, args = op.gram, (x,)
        kern = toeplitz_build(op.backend)
        out["toeplitz_single_coil"] = _time(lambda: toeplitz_apply(kern, x), repeats)
        out["direct_single_coil"] = _time(lambda: gram_apply(op.backend, x), repeats)
    else:
        def fn(*a):
            return psd_inverse_vjp_omega(op, lam, reg, *a, **cg)
        args = (x, v)
    _, peak_vec, peak_bytes = peak_aux_vectors(fn, vec_bytes, *args)
    out["wall_seconds"] = _time(lambda: fn(*args), repeats)
    out["peak_aux_vectors"] = peak_vec
    out["peak_aux_bytes"] = int(peak_bytes)
    out["vector_bytes"] = vec_bytes
    if naive and op_name == "inverse":
        _, nv, nb = peak_aux_vectors(unrolled_cg_inverse_vjp, vec_bytes, op, lam, reg, x, v, cg_iters)
        out["naive_peak_aux_vectors"] = nv
        out["naive_peak_aux_bytes"] = int(nb)
    return out


def _time(fn, repeats):
    best = np.inf
    for _ in range(max(1, repeats)):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return float(best)
