"""Command-line entry point: rasterize, decompose, synth, train, infer, eval, gradcheck."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, stream_seed
from .lms import laplacian_decompose, laplacian_reconstruct, pad_to_multiple, visualize_level
from .metrics import write_report_json, write_rows_csv
from .net import CheckpointError, binarize, load_checkpoint
from .tensor import Tensor, no_grad
from .trajdata import (
    RasterSpec,
    TrajectoryFormatError,
    default_spec,
    encode_counts,
    load_dataset,
    load_png,
    rasterize_counts,
    read_trajectory_csv,
    save_png,
    synth_scene,
    write_dataset,
)

log = logging.getLogger("lfinet")

THREADS_ENV = "LFINET_THREADS"


class CliError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------- commands


def cmd_rasterize(args) -> int:
    logs = read_trajectory_csv(args.csv)
    spec = RasterSpec(tuple(args.bounds), tuple(args.grid))
    counts, outside = rasterize_counts(logs, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out, encode_counts(counts))
    sidecar = {
        "bounds": list(spec.bounds),
        "grid": list(spec.grid),
        "points": int(sum(len(l) for l in logs)),
        "clamp_count": outside,  # points outside the bounds, dropped
        "max_count": int(counts.max()),
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    if outside:
        log.warning("%d points outside the bounds were dropped", outside)
    print(f"wrote {out} ({spec.grid[0]}x{spec.grid[1]}, {sidecar['points']} points, {outside} outside bounds)")
    return 0


def decompose_image(image: np.ndarray) -> tuple[dict[str, np.ndarray], float, tuple[int, int]]:
    """Per-level arrays of a padded float64 image plus the reconstruction max error and the pad applied."""
    padded, pad = pad_to_multiple(image)
    with no_grad():
        d = laplacian_decompose(Tensor(padded, dtype=np.float64))
        recon = laplacian_reconstruct(d).data[0, 0]
    err = float(np.abs(recon - padded).max())
    arrays = {f"L{i}": lvl.data[0, 0] for i, lvl in enumerate(d.levels)}
    arrays["base"] = d.base.data[0, 0]
    return arrays, err, pad


def cmd_decompose(args) -> int:
    image = load_png(args.image)
    arrays, err, pad = decompose_image(image)
    if any(pad):
        print(f"padded {image.shape[0]}x{image.shape[1]} by ({pad[0]}, {pad[1]}) rows/cols to a multiple of 8")
    out = _out_dir(args.out)
    for name, arr in arrays.items():
        save_png(out / f"{name}.png", arr if name == "base" else visualize_level(arr))
    print(f"max reconstruction error: {err!r}")
    return 0


def cmd_synth(args) -> int:
    spec = default_spec(args.size)
    pairs = [synth_scene(stream_seed(args.seed, "synth", i), spec) for i in range(args.n)]
    manifest = write_dataset(pairs, args.out)
    print(f"wrote {len(pairs)} samples, manifest {manifest}")
    return 0


def load_run_config(args) -> RunConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"{path}: config not found")
        data = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise CliError(f"{path}: config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out_dir"] = args.out
    return RunConfig.from_dict(data)


def cmd_train(args) -> int:
    from .train import fit

    cfg = load_run_config(args)
    _, history = fit(cfg, out_dir=cfg.out_dir)
    last = history[-1]
    print(f"trained {len(history)} epochs: loss {last.loss:.4f}, train IoU {last.train_iou:.4f}; "
          f"checkpoint {Path(cfg.out_dir) / cfg.checkpoint}")
    return 0


def _save_map(path: Path, arr: np.ndarray):
    save_png(path, np.clip(arr, 0.0, 1.0))


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    image = load_png(args.image)
    padded, pad = pad_to_multiple(image)
    if padded.shape != tuple(model.cfg.image_size):
        raise CliError(f"image {args.image} of size {image.shape} does not fit model size {model.cfg.image_size}")
    model.eval()
    with no_grad():
        prob, inter = model(Tensor(padded[None, None], dtype=np.float32), return_intermediates=True)
    h, w = image.shape
    prob = prob.data[0, 0, :h, :w]
    out = _out_dir(args.out)
    _save_map(out / "prob.png", prob)
    save_png(out / "mask.png", binarize(prob) * np.uint8(255))
    np.save(out / "prob.npy", prob)
    if args.dump_intermediates:
        dump_intermediates(inter, out / "intermediates")
    print(f"wrote {out / 'prob.png'} and {out / 'mask.png'} (road fraction {binarize(prob).mean():.4f})")
    return 0


def dump_intermediates(inter, out: Path):
    """Gate maps and pyramid levels as PNGs, fusion-weight statistics as CSV."""
    out.mkdir(parents=True, exist_ok=True)
    for i, lvl in enumerate(inter.decomposition.levels):
        save_png(out / f"L{i}.png", visualize_level(lvl.data[0, 0]))
    _save_map(out / "base.png", inter.decomposition.base.data[0, 0])
    rows = []
    for level, fgm in enumerate(inter.fgm):
        _save_map(out / f"gate_L{level}.png", fgm.gate.data[0].mean(axis=0))
        w = fgm.weights.data[0, :, :, 0, 0]  # (3, C)
        for stream, name in enumerate(("gate", "diff", "res")):
            rows.append({"level": level, "stream": name, "mean": float(w[stream].mean()),
                         "min": float(w[stream].min()), "max": float(w[stream].max())})
    with open(out / "fgm_weights.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=("level", "stream", "mean", "min", "max"))
        writer.writeheader()
        writer.writerows(rows)


def cmd_eval(args) -> int:
    from .train import evaluate_model

    model, _ = load_checkpoint(args.checkpoint)
    pairs = load_dataset(args.manifest)
    size = tuple(model.cfg.image_size)
    fit, skipped = [], []
    for p in pairs:
        if pad_to_multiple(p.image)[0].shape != size:
            skipped.append(p.id)
            log.warning("skipping %s: size %s does not fit model size %s", p.id, p.image.shape, size)
        else:
            fit.append(p)
    if not fit:
        raise CliError(f"no sample in {args.manifest} fits model size {size}")
    report, rows = evaluate_model(model, fit, workers=worker_count())
    report.skipped = skipped + report.skipped
    out = _out_dir(args.out)
    write_rows_csv(out / "metrics.csv", rows)
    write_report_json(out / "report.json", report)
    print(f"P {report.precision:.4f} R {report.recall:.4f} Acc {report.accuracy:.4f} F1 {report.f1:.4f} "
          f"IoU {report.iou:.4f} PSNR {report.psnr:.2f} over {report.n_samples} samples")
    return 0


def cmd_gradcheck(args) -> int:
    from .suites import run

    results = run(args.scope, seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lfinet", description="Road extraction from trajectory rasters.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("rasterize", help="trajectory CSV -> count image PNG + JSON sidecar")
    s.add_argument("csv")
    s.add_argument("--bounds", type=float, nargs=4, required=True, metavar=("LON_MIN", "LAT_MIN", "LON_MAX", "LAT_MAX"))
    s.add_argument("--grid", type=int, nargs=2, default=(64, 64), metavar=("H", "W"))
    s.add_argument("--out", required=True, help="output PNG path")
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("decompose", help="write Laplacian levels and base of a PNG")
    s.add_argument("image")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("synth", help="write a synthetic dataset with a manifest")
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from a JSON run config")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="probability and mask PNGs for one image")
    s.add_argument("checkpoint")
    s.add_argument("image")
    s.add_argument("--out", required=True)
    s.add_argument("--dump-intermediates", action="store_true")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="metrics CSV/JSON over a manifest")
    s.add_argument("checkpoint")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    s.add_argument("--scope", default="all", choices=("tensor", "lms", "cfib", "prd", "loss", "all"))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, CheckpointError, TrajectoryFormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is still an error exit, with its type for debugging
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
