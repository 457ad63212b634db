"""Command line entry point: synth, train, infer, eval and ablate.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import ablation, dataset, networks, training
from .fileio import RASTER_SUFFIX, read_image, write_png, write_raster
from .image import YUV_TO_RGB, Raster, RasterError, gray_world_white_balance
from .losses import LossWeights
from .metrics import MetricReport
from .tensor import ShapeError

log = logging.getLogger("vnmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


# -- config -------------------------------------------------------------------------
def load_run_config(path: str | None, preset: str, condition: int | None,
                    seed: int | None = None) -> tuple[training.TrainConfig, LossWeights, networks.Topology]:
    """Merge preset, optional JSON config file and ablation condition.

    The config file may hold ``train``, ``loss`` and ``topology`` objects whose
    keys override the corresponding dataclass fields.
    """
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {p} not found")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {p} is not valid JSON: {exc}") from None
        unknown = set(doc) - {"train", "loss", "topology"}
        if unknown:
            raise UsageError(f"config {p} has unknown sections {sorted(unknown)}")
    try:
        cfg = training.TrainConfig.preset(preset, **doc.get("train", {}))
        weights = LossWeights(**doc.get("loss", {}))
        topo = networks.Topology(**doc.get("topology", {}))
    except TypeError as exc:
        raise UsageError(f"bad config field: {exc}") from None
    if seed is not None:
        cfg = replace(cfg, seed=seed)
        topo = replace(topo, seed=seed)
    if condition is not None:
        cond = ablation.CONDITIONS.get(condition)
        if cond is None:
            raise UsageError(f"unknown ablation condition {condition}; valid ids are 1-10")
        topo, weights = cond.topology(topo), cond.weights(weights)
    return cfg, weights, topo


# -- commands -------------------------------------------------------------------------
def cmd_synth(args) -> int:
    m = dataset.synthesize_dataset(args.scenes, args.size, args.seed, args.out, noise=args.noise)
    print(Path(args.out) / "manifest.json")
    log.info("%d scenes, %d images", len(m.scenes) // 2, m.n_images())
    return EXIT_OK


def _train_samples(data: str) -> list[dataset.Sample]:
    manifest = dataset.Manifest.load(data)
    return dataset.load_batch(manifest, manifest.ids("train"))


def cmd_train(args) -> int:
    cfg, weights, topo = load_run_config(args.config, args.preset, args.ablation, args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    samples = _train_samples(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result = training.train(samples, networks.Pipeline(topo), weights, cfg, out=out, resume=args.resume)
    print(out.with_suffix(".csv"))
    if result.curve:
        first, last = result.curve[0]["total"], result.curve[-1]["total"]
        log.info("total loss %.4f -> %.4f", first, last)
    return EXIT_OK


def _chroma_preview(uv: np.ndarray) -> np.ndarray:
    yuv = np.concatenate([np.full(uv.shape[:2] + (1,), 0.5), uv], axis=-1)
    return np.clip(yuv @ YUV_TO_RGB.T, 0.0, 1.0)


def _balanced(rgb: np.ndarray) -> np.ndarray:
    try:
        return gray_world_white_balance(Raster(np.clip(rgb, 0, 1), "RGB")).data
    except RasterError:
        return np.clip(rgb, 0, 1)


def cmd_infer(args) -> int:
    pipe = networks.Pipeline.load(args.ckpt)
    mixed = read_image(args.input)
    if mixed.ndim != 3 or mixed.shape[2] != 3:
        raise dataset.DatasetError(f"{args.input}: expected an RGB image, got shape {mixed.shape}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = networks.run_pipeline(pipe, mixed)
    write_raster(out_dir / "final", result["rgb"], "final")
    write_png(out_dir / "final.png", _balanced(result["rgb"]))
    if args.intermediates:
        for name in ("nir_est", "p", "vis_est", "y_restored", "uv"):
            arr = result.get(name)
            if arr is None:
                log.warning("%s is not produced by the %s variant", name, pipe.topology.variant)
                continue
            if name == "uv" and arr.shape[-1] == 2:
                arr = _chroma_preview(arr)
            elif name == "vis_est":
                arr = _balanced(arr)
            write_png(out_dir / f"{name}.png", np.clip(arr, 0, 1))
    print(out_dir / "final.png")
    return EXIT_OK


def _image_files(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        raise dataset.DatasetError(f"{folder} is not a directory")
    files = {}
    for p in sorted(folder.iterdir()):
        if p.suffix in (RASTER_SUFFIX, ".png"):
            # a .f32 raster wins over its preview
            if p.stem not in files or p.suffix == RASTER_SUFFIX:
                files[p.stem] = p
    return files


def evaluate_dirs(pred: str | Path, gt: str | Path) -> MetricReport:
    pred_files, gt_files = _image_files(Path(pred)), _image_files(Path(gt))
    if set(pred_files) != set(gt_files) or not pred_files:
        only_p = sorted(set(pred_files) - set(gt_files))
        only_g = sorted(set(gt_files) - set(pred_files))
        raise dataset.DatasetError(f"file sets differ: only in pred {only_p}, only in gt {only_g}")
    report = MetricReport()
    for name in sorted(pred_files):
        a, b = read_image(pred_files[name]), read_image(gt_files[name])
        if a.shape != b.shape:
            raise dataset.DatasetError(f"{name}: shape {a.shape} vs {b.shape}")
        report.add(name, a, b)
    return report


def cmd_eval(args) -> int:
    report = evaluate_dirs(args.pred, args.gt)
    Path(args.report).write_text(json.dumps(report.to_json(), indent=2))
    mean = report.mean
    print(f"PSNR {mean['psnr']:.3f} dB  SSIM {mean['ssim']:.4f}  colourfulness {mean['colourfulness'] or 0:.3f}")
    return EXIT_OK


def run_ablation(data: str | Path, conditions: list[int], preset: str = "desk", config: str | None = None,
                 seed: int | None = None, out_dir: str | Path | None = None,
                 epochs: int | None = None) -> list[dict]:
    manifest = dataset.Manifest.load(data)
    train_samples = dataset.load_batch(manifest, manifest.ids("train"))
    test_samples = dataset.load_batch(manifest, manifest.ids("test"))
    rows = []
    for cid in conditions:
        cfg, weights, topo = load_run_config(config, preset, cid, seed)
        if epochs is not None:
            cfg = replace(cfg, epochs=epochs)
        out = Path(out_dir) / f"condition{cid:02d}" if out_dir is not None else None
        if out is not None:
            out.parent.mkdir(parents=True, exist_ok=True)
        log.info("condition %d: %s", cid, ablation.CONDITIONS[cid].label)
        res = training.train(train_samples, networks.Pipeline(topo), weights, cfg, out=out)
        ev = ablation.evaluate(res.pipeline, test_samples)
        rows.append(ablation.table_row(ablation.CONDITIONS[cid], ev))
    return rows


def cmd_ablate(args) -> int:
    try:
        conditions = ablation.parse_conditions(args.conditions)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = run_ablation(args.data, conditions, args.preset, args.config, args.seed,
                        Path(args.report).parent / "ablation_runs", args.epochs)
    Path(args.report).write_text(json.dumps({"rows": rows}, indent=2))
    print(ablation.format_table(rows))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vnmix", description="VIS/NIR mixed-signal imaging toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a dataset")
    s.add_argument("--scenes", type=int, required=True)
    s.add_argument("--size", type=_size, default=(64, 64))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=_on_off, default=True, metavar="on|off")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    def run_flags(q):
        q.add_argument("--data", required=True)
        q.add_argument("--config")
        q.add_argument("--preset", choices=sorted(training.PRESETS), default="desk")
        q.add_argument("--seed", type=int)
        q.add_argument("--epochs", type=int, help="override the preset's epoch count")

    t = sub.add_parser("train", help="train a pipeline")
    run_flags(t)
    t.add_argument("--out", required=True, help="checkpoint path prefix")
    t.add_argument("--ablation", type=int, metavar="ID")
    t.add_argument("--resume", help="checkpoint written by an earlier train run")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run a checkpoint on one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--intermediates", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score ablation conditions")
    run_flags(a)
    a.add_argument("--conditions", default="1..10")
    a.add_argument("--report", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except training.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (dataset.DatasetError, networks.TopologyError, ShapeError, RasterError,
            FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
