"""Command-line front end.

Every command prints one JSON run record per line on stdout (and appends it
to ``--record FILE`` when given). Exit status: 0 on success, 1 on numerical
failure, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import apps, io
from .errors import FormatError, InvalidArgumentError, KtdError, NumericalError
from .ktd import ktd_decompose, ktd_reconstruct
from .randla import SketchConfig
from .synth import noisy, synth_ktd
from .tensor import DimsGrid

METHOD_NAMES = {
    "ktd": "deterministic",
    "rktd": "randomized",
    "rfktd": "pass_efficient",
    "ptktd": "tucker_first",
}


class UsageError(Exception):
    """Bad flag value; reported with exit status 2."""

    def __init__(self, flag, message):
        super().__init__(f"argument {flag}: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_seed():
    env = os.environ.get("KTD_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError("KTD_SEED", f"not an integer: {env!r}") from None


def _grid(args, dims=None):
    try:
        grid = DimsGrid.parse(args.grid)
        if dims is not None:
            grid.check(dims)
    except InvalidArgumentError as exc:
        raise UsageError("--grid", str(exc)) from None
    return grid


def _load(path, flag="--input"):
    try:
        t = io.read_tensor(path)
    except FileNotFoundError:
        raise UsageError(flag, f"no such file: {path}") from None
    except FormatError as exc:
        raise UsageError(flag, f"{path}: {exc}") from None
    if not np.all(np.isfinite(t)):
        raise NumericalError(f"{flag} {path}: data contains NaN or Inf")
    return t


def _peak(args, reference, path):
    """--peak if given, 255 for 8-bit images, else the largest magnitude."""
    if args.peak:
        return args.peak
    if io.is_image_path(path):
        return 255.0
    return float(np.max(np.abs(reference))) or 1.0


def _seed(args):
    return args.seed if args.seed is not None else _default_seed()


def _sketch(args, rank):
    passes = getattr(args, "passes", None)
    if getattr(args, "method", None) == "rfktd" and passes is None:
        passes = 3
    try:
        return SketchConfig(rank=rank, oversampling=args.oversampling, power_q=args.power,
                            pass_budget=passes, seed=_seed(args))
    except InvalidArgumentError as exc:
        raise UsageError("--oversampling/--power/--passes", str(exc)) from None


def _method(args):
    if args.method == "rktd" and args.passes is not None:
        return "pass_efficient"
    return METHOD_NAMES[args.method]


def _emit(record: io.RunRecord, args):
    line = record.to_json()
    print(line)
    if getattr(args, "record", None):
        with open(args.record, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


def _config(args):
    return {k: v for k, v in vars(args).items() if k not in ("func", "record")}


def _ms(seconds_by_phase):
    return {k: 1000.0 * v for k, v in seconds_by_phase.items()}


def _decompose_kwargs(args, grid):
    kw = {}
    if args.level_ranks:
        kw["level_ranks"] = args.level_ranks
    if args.method == "ptktd":
        kw["ml_ranks"] = args.ml_ranks
        if args.ml_ranks is not None and len(args.ml_ranks) != grid.num_blocks:
            raise UsageError("--ml-ranks", f"need {grid.num_blocks} values, one per block")
    return kw


# --- commands ---------------------------------------------------------------

def cmd_decompose(args):
    x = _load(args.input)
    grid = _grid(args, x.shape)
    if args.rank < 1:
        raise UsageError("--rank", "must be >= 1")
    cfg = _sketch(args, args.rank)
    t0 = time.perf_counter()
    model = ktd_decompose(x, grid, args.rank, _method(args), cfg, **_decompose_kwargs(args, grid))
    t1 = time.perf_counter()
    approx = ktd_reconstruct(model)
    t2 = time.perf_counter()
    io.save_model(args.out, model)
    metrics = {
        "relative_error": apps.relative_error(x, approx),
        "compression_ratio": apps.compression_ratio(grid, model.rank),
        "rank": model.rank,
        "method": model.metadata["method"],
        "passes": model.metadata.get("passes"),
        "notes": model.metadata.get("notes", []),
    }
    timings = {"decompose": t1 - t0, "reconstruct": t2 - t1, **model.metadata.get("timings", {})}
    _emit(io.RunRecord("decompose", _config(args), _ms(timings), metrics, _seed(args),
                       {args.out: io.sha256_file(args.out)}), args)
    return 0


def cmd_reconstruct(args):
    try:
        model = io.load_model(args.model)
    except FileNotFoundError:
        raise UsageError("--model", f"no such file: {args.model}") from None
    except FormatError as exc:
        raise UsageError("--model", str(exc)) from None
    t0 = time.perf_counter()
    x = ktd_reconstruct(model)
    t1 = time.perf_counter()
    io.write_tensor(args.out, x)
    metrics = {"rank": model.rank}
    if args.reference:
        ref = _load(args.reference, "--reference")
        if ref.shape != x.shape:
            raise UsageError("--reference", f"shape {ref.shape} differs from model shape {x.shape}")
        metrics["relative_error"] = apps.relative_error(ref, x)
        metrics["psnr"] = apps.psnr(ref, x, _peak(args, ref, args.reference))
    _emit(io.RunRecord("reconstruct", _config(args), _ms({"reconstruct": t1 - t0}), metrics,
                       None, {args.out: io.sha256_file(args.out)}), args)
    return 0


def cmd_synth(args):
    grid = _grid(args)
    if args.dims is not None and tuple(args.dims) != grid.dims:
        raise UsageError("--grid", f"grid describes dims {grid.dims}, but --dims is {tuple(args.dims)}")
    if args.rank < 1:
        raise UsageError("--rank", "must be >= 1")
    seed = _seed(args)
    t0 = time.perf_counter()
    try:
        x, model = synth_ktd(grid, args.rank, args.spectrum, args.ratio, args.noise, seed)
    except InvalidArgumentError as exc:
        raise UsageError("--spectrum/--ratio", str(exc)) from None
    t1 = time.perf_counter()
    io.write_ten(args.out, x)
    sig_path = str(Path(args.out).with_suffix(".sigmas.json"))
    Path(sig_path).write_text(json.dumps([float(s) for s in model.sigmas]) + "\n")
    _emit(io.RunRecord("synth", _config(args), _ms({"synth": t1 - t0}),
                       {"norm": float(np.linalg.norm(x)), "dims": list(x.shape)}, seed,
                       {args.out: io.sha256_file(args.out), sig_path: io.sha256_file(sig_path)}), args)
    return 0


def _completion_config(args, grid):
    try:
        return apps.CompletionConfig(grid, args.rank, _method(args), _sketch(args, args.rank),
                                     args.max_iters, args.tol, args.smoothing,
                                     acceleration=args.acceleration)
    except InvalidArgumentError as exc:
        raise UsageError("--max-iters/--tol", str(exc)) from None


def _run_completion(args, name, truth, observed, mask, grid):
    state = apps.CompletionState(observed, mask, truth=truth)
    cfg = _completion_config(args, grid)
    t0 = time.perf_counter()
    x, hist = apps.complete(state, cfg)
    t1 = time.perf_counter()
    io.write_tensor(args.out, x)
    metrics = {
        "iterations": len(hist["rel_change"]),
        "observed": int(mask.sum()),
        "observed_preserved": bool(np.array_equal(state.iterate[mask], observed[mask])),
    }
    if truth is not None:
        metrics["relative_error"] = hist["rel_error"][-1]
        metrics["psnr"] = apps.psnr(truth, x, _peak(args, truth, args.input))
    _emit(io.RunRecord(name, _config(args), _ms({"complete": t1 - t0}), metrics, _seed(args),
                       {args.out: io.sha256_file(args.out)}, hist), args)
    return 0


def cmd_complete(args):
    x = _load(args.input)
    grid = _grid(args, x.shape)
    try:
        mask = apps.random_mask(x.shape, args.missing_frac, _seed(args))
    except InvalidArgumentError as exc:
        raise UsageError("--missing-frac", str(exc)) from None
    return _run_completion(args, "complete", x, np.where(mask, x, 0.0), mask, grid)


def cmd_superres(args):
    x = _load(args.input)
    if x.ndim < 2:
        raise UsageError("--input", "super-resolution needs at least two spatial modes")
    if args.downsample < 1:
        raise UsageError("--downsample", "must be >= 1")
    if args.lowres:
        observed, mask = apps.embed_lowres(x, args.downsample)
        truth = None
    else:
        mask = apps.downsample_mask(x.shape, args.downsample)
        observed, truth = np.where(mask, x, 0.0), x
    grid = _grid(args, observed.shape)
    return _run_completion(args, "superres", truth, observed, mask, grid)


def cmd_denoise(args):
    clean = _load(args.input)
    grid = _grid(args, clean.shape)
    peak = _peak(args, clean, args.input)
    try:
        x = noisy(clean, args.noise, args.noise_level, peak, _seed(args))
    except InvalidArgumentError as exc:
        raise UsageError("--noise/--noise-level", str(exc)) from None
    cfg = _sketch(args, args.rank)
    t0 = time.perf_counter()
    recon, residual = apps.denoise(x, grid, args.rank, _method(args), cfg)
    t1 = time.perf_counter()
    io.write_tensor(args.out, recon)
    sums = {args.out: io.sha256_file(args.out)}
    if args.residual_out:
        io.write_ten(args.residual_out, residual)
        sums[args.residual_out] = io.sha256_file(args.residual_out)
    metrics = {"residual_norm": float(np.linalg.norm(residual))}
    if args.noise != "none":
        metrics["psnr_noisy"] = apps.psnr(clean, x, peak)
        metrics["psnr_denoised"] = apps.psnr(clean, recon, peak)
    _emit(io.RunRecord("denoise", _config(args), _ms({"denoise": t1 - t0}), metrics,
                       _seed(args), sums), args)
    return 0


def _bench_plan(args):
    return [
        {"method": m, "rank": r, "seed": s}
        for m in args.methods for r in args.ranks for s in range(args.seed0, args.seed0 + args.seeds)
    ]


def _bench_one(job):
    """Run one bench cell; module-level so worker processes can pickle it."""
    grid = DimsGrid.parse(job["grid"])
    x, _ = synth_ktd(grid, job["true_rank"], "exact", seed=job["seed"])
    method = METHOD_NAMES[job["method"]]
    passes = job["passes"] if job["method"] == "rfktd" else None
    cfg = SketchConfig(rank=job["rank"], oversampling=job["oversampling"], power_q=job["power"],
                       pass_budget=passes, seed=job["seed"])
    times = []
    model = None
    for _ in range(job["repeats"]):
        t0 = time.perf_counter()
        model = ktd_decompose(x, grid, job["rank"], method, cfg)
        times.append(time.perf_counter() - t0)
    err = apps.relative_error(x, ktd_reconstruct(model))
    metrics = {"relative_error": err, "median_ms": 1000.0 * statistics.median(times),
               "method": job["method"]}
    if job["method"] == "rfktd":
        metrics["passes"] = model.metadata.get("passes")
        metrics["pass_budget"] = passes
    return io.RunRecord("bench", {k: job[k] for k in ("grid", "true_rank", "rank", "method",
                                                       "repeats", "oversampling", "power")},
                        {"decompose_median": 1000.0 * statistics.median(times)},
                        dict(metrics, repeats_ms=[1000.0 * t for t in times]), job["seed"])


def cmd_bench(args):
    grid = _grid(args)
    unknown = [m for m in args.methods if m not in METHOD_NAMES]
    if unknown:
        raise UsageError("--methods", f"unknown method(s) {unknown}; choose from {sorted(METHOD_NAMES)}")
    if not args.ranks or any(r < 1 for r in args.ranks):
        raise UsageError("--ranks", "need positive ranks")
    if args.seeds < 1 or args.repeats < 1:
        raise UsageError("--seeds/--repeats", "must be >= 1")
    plan = _bench_plan(args)
    if args.dry_run:
        for cell in plan:
            print(json.dumps({"plan": cell, "grid": str(grid), "true_rank": args.true_rank}, sort_keys=True))
        return 0
    jobs = [dict(cell, grid=str(grid), true_rank=args.true_rank, repeats=args.repeats,
                 oversampling=args.oversampling, power=args.power, passes=args.passes)
            for cell in plan]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            records = list(pool.map(_bench_one, jobs))
    else:
        records = [_bench_one(job) for job in jobs]
    for rec in records:
        _emit(rec, args)
    return 0


# --- parser -----------------------------------------------------------------

def _add_sketch_flags(p, method_default="rktd"):
    p.add_argument("--method", choices=sorted(METHOD_NAMES), default=method_default)
    p.add_argument("--oversampling", type=int, default=5)
    p.add_argument("--power", type=int, default=1)
    p.add_argument("--passes", type=int, default=None,
                   help="pass budget; with --method rktd switches to the pass-efficient sketch")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default: $KTD_SEED or 0)")


def _add_completion_flags(p):
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--smoothing", choices=["none", "box3"], default="box3")
    p.add_argument("--acceleration", choices=["none", "nesterov"], default="nesterov")
    p.add_argument("--peak", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="rktd", description="Randomized Kronecker tensor decomposition")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--record", help="also append run records to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", parents=[common], help="decompose a tensor into a .ktdm model")
    p.add_argument("--input", required=True)
    p.add_argument("--grid", required=True, help='block extents, e.g. "4,4,4,4x5,5,5,5"')
    p.add_argument("--rank", type=int, required=True)
    _add_sketch_flags(p, "ktd")
    p.add_argument("--ml-ranks", type=_int_list, default=None)
    p.add_argument("--level-ranks", type=_int_list, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("reconstruct", parents=[common], help="expand a .ktdm model into a tensor or image")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference")
    p.add_argument("--peak", type=float, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic tensor of known KTD rank")
    p.add_argument("--grid", required=True)
    p.add_argument("--dims", type=_int_list, default=None)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--spectrum", choices=["exact", "geometric", "flat-noise"], default="exact")
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("complete", cmd_complete, "hide entries and recover them"),
                                 ("superres", cmd_superres, "recover a down-sampled image")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--input", required=True)
        p.add_argument("--grid", required=True)
        p.add_argument("--rank", type=int, required=True)
        _add_sketch_flags(p)
        _add_completion_flags(p)
        p.add_argument("--out", required=True)
        if name == "complete":
            p.add_argument("--missing-frac", type=float, default=0.7)
        else:
            p.add_argument("--downsample", type=int, default=4)
            p.add_argument("--lowres", action="store_true",
                           help="input is already low resolution; output is --downsample times larger")
        p.set_defaults(func=func)

    p = sub.add_parser("denoise", parents=[common], help="low-rank KTD denoising")
    p.add_argument("--input", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--rank", type=int, required=True)
    _add_sketch_flags(p)
    p.add_argument("--noise", choices=["none", "gaussian", "salt-pepper", "speckle"], default="none")
    p.add_argument("--noise-level", type=float, default=0.0)
    p.add_argument("--peak", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--residual-out")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("bench", parents=[common], help="timing sweep over methods and ranks")
    p.add_argument("--grid", default="8,8,8x5,5,5")
    p.add_argument("--true-rank", type=int, default=10)
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m], default=["ktd", "rktd"])
    p.add_argument("--ranks", type=_int_list, default=[5, 10])
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed0", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--oversampling", type=int, default=5)
    p.add_argument("--power", type=int, default=1)
    p.add_argument("--passes", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except InvalidArgumentError as exc:
        parser.error(str(exc))
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"rktd: numerical failure: {exc}", file=sys.stderr)
        return 1
    except KtdError as exc:
        print(f"rktd: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
