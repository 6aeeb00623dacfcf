"""Command-line interface.

Every command prints JSON lines tagged with ``schema_version`` and
``command``. Exit codes: 0 success, 2 a reported error exceeds its
threshold, 3 a solver failed to converge or produced non-finite values,
4 an input/output or file-format error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .grid import ComplexImage, ImageGrid, psnr, ssim
from .io import (
    FormatError,
    read_cimg,
    read_cimg_stack,
    read_kspace,
    read_traj,
    write_cimg,
    write_kspace,
    write_traj,
)
from .mri import Encoding, simulate_kspace
from .nufft import set_fft_workers
from .recon import ReconConfig, recon
from .solvers import CgBreakdown, ConvergenceWarning, NonFiniteIterate

SCHEMA_VERSION = 1
EXIT_OK, EXIT_THRESHOLD, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


class _Failure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def emit(command: str, payload: dict, stream=None) -> None:
    rec = {"schema_version": SCHEMA_VERSION, "command": command}
    rec.update(payload)
    print(json.dumps(rec, default=_json_default), file=stream or sys.stdout, flush=True)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# -- commands -----------------------------------------------------------------

def cmd_phantom(args):
    from .phantom import make_dataset

    grid = ImageGrid(tuple(args.dims))
    _, manifest = make_dataset(args.count, grid, args.seed, args.out, jitter=args.jitter,
                               phase=args.phase)
    emit("phantom", {"out": args.out, "count": manifest["count"], "grid": manifest["grid"],
                     "seed": args.seed})
    return EXIT_OK


def _load_maps(path, grid):
    if path is None:
        return None
    stack = read_cimg_stack(path)
    maps = np.stack([np.asarray(m.data) for m in stack])
    if maps.shape[1:] != grid.dims:
        raise FormatError(f"{path}: maps {maps.shape[1:]} do not match image grid {grid.dims}")
    return maps


def cmd_simulate(args):
    img = read_cimg(args.image)
    traj = read_traj(args.traj)
    maps = _load_maps(args.maps, img.grid)
    op = Encoding(img.grid, traj, maps=maps, preset=args.preset)
    y = simulate_kspace(op, img.data, args.noise_sigma, args.seed)
    write_kspace(args.out, y.samples)
    emit("simulate", {"out": args.out, "n_samples": op.n_samples, "n_coils": op.n_coils,
                      "noise_sigma": args.noise_sigma})
    return EXIT_OK


def cmd_recon(args):
    traj = read_traj(args.traj)
    y = read_kspace(args.kspace)
    if args.reference is not None:
        ref = read_cimg(args.reference)
        grid = ref.grid
    else:
        ref = None
        grid = ImageGrid(tuple(args.dims)) if args.dims else None
    if grid is None:
        raise _Failure(EXIT_IO, "recon needs --reference or --dims to know the image grid")
    maps = _load_maps(args.maps, grid)
    op = Encoding(grid, traj, maps=maps, preset=args.preset)
    if y.shape != op.kshape:
        raise FormatError(f"{args.kspace}: data shape {y.shape} does not match {op.kshape}")
    cfg = ReconConfig(args.method, lam=args.lam, iters=args.iters, preset=args.preset, tol=args.tol)
    t0 = time.perf_counter()
    res = recon(op, y, cfg)
    runtime = (time.perf_counter() - t0) * 1e3
    if not np.all(np.isfinite(res.image)):
        raise _Failure(EXIT_SOLVER, "reconstruction produced non-finite values")
    write_cimg(args.out, ComplexImage(grid, res.image))
    metrics = {"method": cfg.method, "psnr_db": None, "ssim": None, "runtime_ms": runtime,
               "iterations": res.iterations, "converged": res.converged, "out": args.out}
    if ref is not None:
        metrics["psnr_db"] = psnr(res.image, ref.data)
        if grid.ndim == 2 and min(grid.dims) >= 11:
            metrics["ssim"] = ssim(res.image, ref.data)
    emit("recon", metrics)
    if not res.converged:
        return EXIT_SOLVER
    return EXIT_OK


def _write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in r) + "\n")


def cmd_validate(args):
    from . import validation

    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.suite == "jacobians":
        report, profiles = validation.jacobian_suite(args.size, args.seed, preset=args.preset,
                                                     keep_profiles=True)
        if out is not None:
            for kind, prof in profiles.items():
                keys = list(prof)
                _write_csv(out / f"gradient_profile_{kind}.csv", ["sample"] + keys,
                           [[i] + [float(prof[k][i]) for k in keys] for i in range(len(prof[keys[0]]))])
            from .plotting import plot_gradient_profiles

            report["figure"] = str(plot_gradient_profiles(
                profiles, out / "gradient_profiles.png", "d loss / d omega_1"))
    elif args.suite == "adjoints":
        report = validation.adjoint_suite(args.size, args.seed)
    else:
        report = validation.oracle_suite(args.size, args.seed)
        if out is not None:
            keys = [k for k in report["cases"][0] if k != "instance"]
            _write_csv(out / "oracle_nrmsd.csv", ["instance"] + keys,
                       [[c["instance"]] + [float(c[k]) for k in keys] for c in report["cases"]])
    if out is not None:
        (out / f"validate_{args.suite}.json").write_text(json.dumps(report, default=_json_default) + "\n")
    emit("validate", report)
    return EXIT_OK if report["passed"] else EXIT_THRESHOLD


def cmd_bench(args):
    from .validation import bench

    rep = bench(args.op, args.size, args.cg_iters, seed=args.seed, preset=args.preset,
                naive=args.naive)
    emit("bench", rep)
    return EXIT_OK


OPTIMIZE_KEYS = {
    "dims": "64,64", "n_images": "100", "n_test": "20", "n_coils": "8", "data_seed": "0",
    "n_shots": "8", "samples_per_shot": "320", "method": "cgsense", "lam": "", "iters": "",
    "preset": "low", "dataset": "",
}


def load_optimize_config(path):
    """Parse a ``key = value`` file into ``(TrajOptConfig, run options)``.

    Keys mirror :class:`~nufftjac.trajopt.TrajOptConfig` fields plus run
    options (``dims``, ``n_images``, ``n_test``, ``n_coils``, ``data_seed``,
    ``n_shots``, ``samples_per_shot``, ``method``, ``lam``, ``iters``,
    ``preset``, ``dataset``). Blank lines and ``#`` comments are ignored.
    """
    from .trajopt import TrajOptConfig

    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[optimize]\n" + text)
    except configparser.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    raw = dict(parser["optimize"])
    known = {f.name: f for f in fields(TrajOptConfig) if f.name != "recon"}
    unknown = set(raw) - set(known) - set(OPTIMIZE_KEYS)
    if unknown:
        raise FormatError(f"{path}: unknown keys {sorted(unknown)}")
    opts = dict(OPTIMIZE_KEYS)
    opts.update({k: v for k, v in raw.items() if k in OPTIMIZE_KEYS})
    kw = {}
    for name, val in raw.items():
        if name in known:
            kw[name] = _coerce(val, known[name].type)
    rcfg = ReconConfig(opts["method"], lam=float(opts["lam"]) if opts["lam"] else None,
                       iters=int(opts["iters"]) if opts["iters"] else None, preset=opts["preset"])
    return TrajOptConfig(recon=rcfg, **kw), opts


def _coerce(val, typ):
    typ = str(typ)
    if "int" in typ:
        return None if val.lower() == "none" else int(val)
    return float(val)


def cmd_optimize(args):
    from .phantom import load_dataset, make_dataset, sim_coils
    from .plotting import plot_history, plot_trajectory
    from .trajopt import evaluate, fit_spline, radial_init, spline_to_traj, train, violation_mass

    cfg, opts = load_optimize_config(args.config)
    dims = tuple(int(d) for d in opts["dims"].split(","))
    grid = ImageGrid(dims)
    if opts["dataset"]:
        images, _ = load_dataset(opts["dataset"])
    else:
        images, _ = make_dataset(int(opts["n_images"]), grid, int(opts["data_seed"]))
    n_test = int(opts["n_test"])
    if not 0 <= n_test < len(images):
        raise _Failure(EXIT_IO, "n_test must leave at least one training image")
    train_set, test_set = images[: len(images) - n_test], images[len(images) - n_test:]
    maps = sim_coils(grid, int(opts["n_coils"]), int(opts["data_seed"])).maps
    init_traj = radial_init(int(opts["n_shots"]), int(opts["samples_per_shot"]), cfg.dt)
    init = fit_spline(init_traj, cfg.n_kernels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def log(step, value, parts):
        if step % args.log_every == 0:
            emit("optimize", {"event": "step", "step": step, "loss": value, **parts})

    final, hist = train(train_set, maps, cfg, init, grid, checkpoint_dir=out / "checkpoints", log=log)
    learned = spline_to_traj(final, cfg.dt)
    write_traj(out / "learned.traj", learned)
    write_traj(out / "init.traj", spline_to_traj(init, cfg.dt))
    (out / "history.json").write_text(json.dumps(hist) + "\n")
    summary = {"event": "done", "steps": len(hist["loss"]), "out": str(out),
               "violation_mass": violation_mass(learned, cfg, dims)}
    if len(test_set):
        summary["test_psnr_init_db"] = evaluate(spline_to_traj(init, cfg.dt), test_set, maps, cfg.recon, grid)
        summary["test_psnr_learned_db"] = evaluate(learned, test_set, maps, cfg.recon, grid)
    plot_history(hist, out / "loss.png")
    plot_trajectory(learned, out / "trajectory.png", reference=spline_to_traj(init, cfg.dt))
    emit("optimize", summary)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nufftjac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1, help="cap on FFT worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write a Shepp-Logan training set")
    s.add_argument("--dims", type=int, nargs=2, default=[64, 64])
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jitter", type=float, default=0.05)
    s.add_argument("--phase", choices=["smooth", "voxel", "none"], default="smooth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("simulate", help="simulate multi-coil k-space data")
    s.add_argument("--image", required=True)
    s.add_argument("--traj", required=True)
    s.add_argument("--maps", help="CIMG stack of coil maps")
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preset", choices=["low", "high"], default="high")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("recon", help="reconstruct an image from k-space data")
    s.add_argument("--kspace", required=True)
    s.add_argument("--traj", required=True)
    s.add_argument("--maps")
    s.add_argument("--reference", help="ground-truth image for PSNR/SSIM (also fixes the grid)")
    s.add_argument("--dims", type=int, nargs="+")
    s.add_argument("--method", choices=["cgsense", "qpls", "cs"], default="cgsense")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--iters", type=int)
    s.add_argument("--tol", type=float, help="tolerance-driven CG instead of a fixed count")
    s.add_argument("--preset", choices=["low", "high"], default="high")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_recon)

    s = sub.add_parser("validate", help="accuracy reports against exact references")
    s.add_argument("--suite", choices=["jacobians", "adjoints", "oracle"], required=True)
    s.add_argument("--size", type=int, default=40)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--preset", choices=["low", "high"], default="high")
    s.add_argument("--out", help="directory for CSV tables and figures")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("bench", help="time and peak allocation of Gram / inverse-Jacobian products")
    s.add_argument("--op", choices=["gram", "inverse"], default="inverse")
    s.add_argument("--size", choices=["small", "large"], default="small")
    s.add_argument("--cg-iters", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preset", choices=["low", "high"], default="high")
    s.add_argument("--naive", action="store_true", help="also measure the store-every-iterate path")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("optimize", help="learn a trajectory")
    s.add_argument("--config", required=True, help="key = value settings file")
    s.add_argument("--out", required=True)
    s.add_argument("--log-every", type=int, default=10)
    s.set_defaults(func=cmd_optimize)
    return p


def main(argv=None) -> int:
    from .trajopt import NonFiniteLoss

    parser = build_parser()
    args = parser.parse_args(argv)
    set_fft_workers(args.threads)
    if getattr(args, "phase", None) == "none":
        args.phase = False
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", ConvergenceWarning)
            return args.func(args)
    except _Failure as exc:
        emit(args.command, {"error": str(exc)}, sys.stderr)
        return exc.code
    except (CgBreakdown, NonFiniteIterate, NonFiniteLoss, ConvergenceWarning) as exc:
        emit(args.command, {"error": f"solver: {exc}"}, sys.stderr)
        return EXIT_SOLVER
    except (FormatError, OSError, ValueError) as exc:
        emit(args.command, {"error": f"io: {exc}"}, sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
