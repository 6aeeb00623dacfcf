"""Stochastic trajectory learning.

Each shot is a quadratic B-spline, ``omega_shot = B c_shot``, and the
coefficients are trained with Adam against the reconstruction loss
``||x_K(omega) - x_true||^2`` plus soft gradient and slew-rate penalties.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline

from .grid import ImageGrid, Trajectory, psnr
from .io import write_traj
from .mri import Encoding
from .recon import ReconConfig, recon, recon_pullback_omega
from .solvers import AdamState, adam_step

__all__ = [
    "GAMMA_KHZ_PER_GAUSS",
    "TrajOptConfig",
    "SplineParam",
    "NonFiniteLoss",
    "radial_init",
    "spline_basis",
    "fit_spline",
    "spline_to_traj",
    "traj_grad_to_spline",
    "clip_count",
    "hardware_penalty",
    "violation_mass",
    "training_loss",
    "train",
    "evaluate",
    "smoothed",
]

GAMMA_KHZ_PER_GAUSS = 4.2576


@dataclass(frozen=True)
class TrajOptConfig:
    """Trajectory-learning settings.

    Physical units: ``gmax`` G/cm, ``smax`` G/cm/ms, ``gamma`` kHz/G,
    ``dt`` ms, ``fov`` cm. The default dwell time is 5 ms / 1280 samples.
    """

    mu1: float = 10.0
    mu2: float = 10.0
    gmax: float = 5.0
    smax: float = 15.0
    gamma: float = GAMMA_KHZ_PER_GAUSS
    dt: float = 5.0 / 1280
    fov: float = 22.0
    lr: float = 1e-4
    batch: int = 12
    epochs: int = 1
    seed: int = 0
    n_kernels: int = 40
    max_steps: int | None = None
    recon: ReconConfig = field(default_factory=ReconConfig)

    def __post_init__(self):
        for name in ("gmax", "smax", "gamma", "dt", "fov", "lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.batch < 1 or self.n_kernels < 3 or self.epochs < 0:
            raise ValueError("batch >= 1, n_kernels >= 3 and epochs >= 0 required")

    @property
    def grad_limit(self) -> float:
        """Largest k-space step per sample, cycles/cm."""
        return self.gamma * self.dt * self.gmax

    @property
    def slew_limit(self) -> float:
        """Largest second difference per sample, cycles/cm."""
        return self.gamma * self.dt**2 * self.smax

    def with_(self, **kw) -> "TrajOptConfig":
        return replace(self, **kw)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step: int, batch_ids):
        super().__init__(f"non-finite loss at step {step}, batch {list(batch_ids)}")
        self.step = step
        self.batch_ids = list(batch_ids)


@dataclass
class SplineParam:
    """Spline coefficients ``(n_shots, n_kernels, D)`` and basis ``(S, n_kernels)``."""

    coeffs: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1] != self.basis.shape[1]:
            raise ValueError(f"coefficients {self.coeffs.shape} do not fit basis {self.basis.shape}")

    @property
    def n_shots(self) -> int:
        return self.coeffs.shape[0]

    @property
    def samples_per_shot(self) -> int:
        return self.basis.shape[0]

    def with_coeffs(self, coeffs) -> "SplineParam":
        return SplineParam(coeffs, self.basis)


def radial_init(n_shots: int, samples_per_shot: int, dwell: float = 5.0 / 1280) -> Trajectory:
    """Uniform-angle diametric spokes.

    Shot ``s`` runs along angle ``pi s / n_shots`` through cell-centered
    samples ``-pi + (j + 1/2) 2 pi / S``, so the center of k-space lies half a
    sample step from the middle samples.
    """
    if n_shots < 1 or samples_per_shot < 1:
        raise ValueError("shot and sample counts must be positive")
    r = -np.pi + (np.arange(samples_per_shot) + 0.5) * 2 * np.pi / samples_per_shot
    ang = np.pi * np.arange(n_shots) / n_shots
    om = np.stack([np.cos(ang)[:, None] * r, np.sin(ang)[:, None] * r], axis=-1)
    return Trajectory(om.reshape(-1, 2), n_shots, samples_per_shot, dwell)


def spline_basis(samples_per_shot: int, n_kernels: int) -> np.ndarray:
    """Clamped uniform quadratic B-spline design matrix ``(S, n_kernels)``."""
    k = 2
    if n_kernels < k + 1:
        raise ValueError("need at least 3 kernels for a quadratic spline")
    inner = np.linspace(0, 1, n_kernels - k + 1)
    knots = np.concatenate([[0.0] * k, inner, [1.0] * k])
    x = np.linspace(0, 1, samples_per_shot)
    return BSpline.design_matrix(x, knots, k).toarray()


def fit_spline(traj: Trajectory, n_kernels: int = 40) -> SplineParam:
    """Least-squares spline coefficients reproducing ``traj`` shot by shot."""
    basis = spline_basis(traj.samples_per_shot, n_kernels)
    shots = traj.shots()
    coeffs = np.stack([np.linalg.lstsq(basis, s, rcond=None)[0] for s in shots])
    return SplineParam(coeffs, basis)


def _raw_omega(p: SplineParam) -> np.ndarray:
    return np.einsum("sk,nkd->nsd", p.basis, p.coeffs).reshape(-1, p.coeffs.shape[2])


def spline_to_traj(p: SplineParam, dwell: float = 5.0 / 1280) -> Trajectory:
    """``omega = B c`` per shot, clipped to ``[-pi, pi]``."""
    om = np.clip(_raw_omega(p), -np.pi, np.pi)
    return Trajectory(om, p.n_shots, p.samples_per_shot, dwell)


def clip_count(p: SplineParam) -> int:
    return int(np.count_nonzero(np.abs(_raw_omega(p)) > np.pi))


def traj_grad_to_spline(p: SplineParam, g) -> np.ndarray:
    """Pull an ``(M, D)`` omega-gradient back to the coefficients (``B^T g``).

    Entries where the clip is active receive no gradient.
    """
    g = np.asarray(g, dtype=float)
    d = p.coeffs.shape[2]
    if g.shape != (p.n_shots * p.samples_per_shot, d):
        raise ValueError(f"gradient shape {g.shape} does not match trajectory")
    g = np.where(np.abs(_raw_omega(p)) > np.pi, 0.0, g)
    return np.einsum("sk,nsd->nkd", p.basis, g.reshape(p.n_shots, p.samples_per_shot, d))


# -- hardware constraints -----------------------------------------------------

def _physical_shots(traj: Trajectory, dims, fov):
    scale = np.asarray(dims, dtype=float) / (2 * np.pi * fov)
    return traj.shots() * scale, scale


def _hinge_terms(k, limit, order):
    diff = np.diff(k, n=order, axis=1)
    mag = np.linalg.norm(diff, axis=-1)
    excess = np.maximum(mag - limit, 0.0)
    return diff, mag, excess


def _diff_transpose(g, order):
    # adjoint of np.diff(., n=order) along axis 1
    for _ in range(order):
        pad = np.zeros(g.shape[:1] + (1,) + g.shape[2:])
        g = np.concatenate([pad, g], axis=1) - np.concatenate([g, pad], axis=1)
    return g


def hardware_penalty(traj: Trajectory, cfg: TrajOptConfig, dims):
    """Soft gradient and slew penalty with its omega-gradient.

    ``mu1 sum max(|D1 k| - gamma dt gmax, 0) + mu2 sum max(|D2 k| - gamma dt^2 smax, 0)``
    on physical k-space ``k = omega N / (2 pi fov)`` (cycles/cm), with
    differences taken within each shot and ``|.|`` the Euclidean norm across
    dimensions. The subgradient at the kink is zero.

    Returns
    -------
    value : float
    grad : (M, D) ndarray
    """
    if traj.samples_per_shot < 3:
        raise ValueError("hardware penalty needs at least 3 samples per shot")
    k, scale = _physical_shots(traj, dims, cfg.fov)
    value = 0.0
    gk = np.zeros_like(k)
    for order, mu, limit in ((1, cfg.mu1, cfg.grad_limit), (2, cfg.mu2, cfg.slew_limit)):
        diff, mag, excess = _hinge_terms(k, limit, order)
        value += mu * float(excess.sum())
        active = excess > 0
        unit = np.where(active[..., None], diff / np.where(mag > 0, mag, 1)[..., None], 0.0)
        gk += mu * _diff_transpose(unit, order)
    return value, (gk * scale).reshape(-1, k.shape[-1])


def violation_mass(traj: Trajectory, cfg: TrajOptConfig, dims) -> float:
    """Total constraint excess in units of the limits.

    ``sum max(|D1 k| - g_lim, 0) / g_lim + sum max(|D2 k| - s_lim, 0) / s_lim``.
    """
    k, _ = _physical_shots(traj, dims, cfg.fov)
    m1 = _hinge_terms(k, cfg.grad_limit, 1)[2].sum() / cfg.grad_limit
    m2 = _hinge_terms(k, cfg.slew_limit, 2)[2].sum() / cfg.slew_limit
    return float(m1 + m2)


# -- loss and training --------------------------------------------------------

def _encoding(grid, traj, maps, cfg):
    return Encoding(grid, traj, maps=maps, preset=cfg.recon.preset)


def training_loss(p: SplineParam, images, maps, cfg: TrajOptConfig, grid: ImageGrid | None = None):
    """Mean reconstruction loss over ``images`` plus the hardware penalty.

    Returns ``(value, coefficient gradient, parts)`` where ``parts`` splits the
    value into ``recon`` and ``penalty``.
    """
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise ValueError("empty batch")
    grid = ImageGrid(images.shape[1:]) if grid is None else grid
    traj = spline_to_traj(p, cfg.dt)
    op = _encoding(grid, traj, maps, cfg)
    rec = 0.0
    g = np.zeros_like(op.omega)
    for x in images:
        loss, grad, _ = recon_pullback_omega(op, x, cfg.recon)
        rec += loss
        g += grad
    rec /= len(images)
    g /= len(images)
    pen, gp = hardware_penalty(traj, cfg, grid.dims)
    value = rec + pen
    return value, traj_grad_to_spline(p, g + gp), {"recon": rec, "penalty": pen}


def smoothed(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _save_checkpoint(out: Path, epoch: int, p: SplineParam, cfg: TrajOptConfig, history):
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"epoch_{epoch:04d}"
    write_traj(stem.with_suffix(".traj"), spline_to_traj(p, cfg.dt))
    stem.with_suffix(".coef").write_bytes(np.ascontiguousarray(p.coeffs, dtype="<f8").tobytes())
    meta = {
        "epoch": epoch,
        "coeff_shape": list(p.coeffs.shape),
        "config": _config_dict(cfg),
        "history": history,
    }
    stem.with_suffix(".json").write_text(json.dumps(meta) + "\n")


def _config_dict(cfg: TrajOptConfig):
    d = asdict(cfg)
    d["recon"] = asdict(cfg.recon)
    return d


def train(images, maps, cfg: TrajOptConfig, init: SplineParam, grid: ImageGrid | None = None,
          checkpoint_dir=None, log=None):
    """Adam on the spline coefficients over shuffled mini-batches.

    Mini-batches are drawn from a Philox generator seeded with ``cfg.seed``;
    within a batch the gradient is the mean in dataset order. Training stops
    after ``cfg.epochs`` epochs or ``cfg.max_steps`` steps, whichever comes
    first. A checkpoint (trajectory, raw coefficients, JSON history) is
    written after every epoch when ``checkpoint_dir`` is given.

    Returns
    -------
    SplineParam
        Final coefficients.
    dict
        Per-step ``loss``, ``recon``, ``penalty``, ``clipped`` and ``seconds``.
    """
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise ValueError("empty dataset")
    grid = ImageGrid(images.shape[1:]) if grid is None else grid
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    p = init.with_coeffs(init.coeffs.copy())
    state = AdamState(p.coeffs.shape, lr=cfg.lr)
    hist = {"loss": [], "recon": [], "penalty": [], "clipped": [], "seconds": []}
    out = Path(checkpoint_dir) if checkpoint_dir is not None else None
    n = images.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            ids = np.sort(order[start:start + cfg.batch])
            t0 = time.perf_counter()
            try:
                value, g, parts = training_loss(p, images[ids], maps, cfg, grid)
            except FloatingPointError as exc:
                raise NonFiniteLoss(step, ids) from exc
            if not (math.isfinite(value) and np.all(np.isfinite(g))):
                raise NonFiniteLoss(step, ids)
            p = p.with_coeffs(adam_step(state, p.coeffs, g))
            step += 1
            hist["loss"].append(value)
            hist["recon"].append(parts["recon"])
            hist["penalty"].append(parts["penalty"])
            hist["clipped"].append(clip_count(p))
            hist["seconds"].append(time.perf_counter() - t0)
            if log is not None:
                log(step, value, parts)
        if out is not None:
            _save_checkpoint(out, epoch, p, cfg, hist)
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return p, hist


def evaluate(traj: Trajectory, images, maps, rcfg: ReconConfig, grid: ImageGrid | None = None):
    """Mean PSNR (dB) of reconstructions of ``images`` from noiseless data."""
    images = np.asarray(images)
    grid = ImageGrid(images.shape[1:]) if grid is None else grid
    op = Encoding(grid, traj, maps=maps, preset=rcfg.preset)
    vals = [psnr(recon(op, op.forward(x), rcfg).image, x) for x in images]
    return float(np.mean(vals))
