"""Command-line entry point.

Exit codes: 0 success, 1 internal error (including failed ablation cells or
diverged training), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import datagen as D
from . import geometry as G
from . import io
from . import metrics as M
from . import plots
from . import training as TR
from .config import Config, ConfigError, load_config, save_config
from .decoder import surface_of

log = logging.getLogger("shapecomp")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2
LOCK_NAME = ".lock"


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


@contextmanager
def run_lock(directory):
    """Exclusive lock file so two commands never write the same directory."""
    path = io.ensure_dir(directory) / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"{directory} is locked by another run (remove {path} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _overrides(args) -> dict:
    out = {"profile": getattr(args, "profile", None), "seed": getattr(args, "seed", None)}
    if getattr(args, "loss", None):
        out["train.loss"] = args.loss
    if getattr(args, "epochs", None) is not None:
        out["train.epochs"] = args.epochs
    return out


def _config(args) -> Config:
    return load_config(getattr(args, "config", None), **_overrides(args))


def _load_dataset(path) -> D.Dataset:
    if not Path(path, "manifest.txt").exists():
        raise InputError(f"no dataset at {path} (manifest.txt missing)")
    return D.load_dataset(path)


# ------------------------------------------------------------------ dataset
def cmd_dataset_synth(args) -> int:
    cfg = _config(args)
    if args.poses_per_family is not None:
        cfg.dataset.poses_per_family = args.poses_per_family
    if args.pose_tag is not None:
        cfg.dataset.pose_tag = args.pose_tag
    if args.families:
        cfg.dataset.families = args.families.split(",")
    cfg = cfg.resolve()
    out = Path(args.out or cfg.dataset.path)
    if out.exists() and any(out.iterdir()):
        raise InputError(f"output directory {out} is not empty")
    with run_lock(out):
        D.synthesize_dataset(out, cfg.synth_config())
    problems = D.validate_dataset(out)
    for p in problems:
        print(f"invalid: {p}", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_INTERNAL if problems else EXIT_OK


def cmd_dataset_ingest(args) -> int:
    for flag, path in (("--depth-dir", args.depth_dir), ("--label-dir", args.label_dir),
                       ("--models", args.models)):
        if not Path(path).is_dir():
            raise InputError(f"{flag}: directory not found: {path}")
    models = D.load_object_models(args.models, args.points)
    result = D.ingest(args.depth_dir, args.label_dir, args.intrinsics, models, args.stride,
                      args.points, args.pose_dir, args.pose_tag)
    if not result:
        raise InputError("ingest produced no pairs")
    objects = {}
    for m in models.values():
        objects[m.name] = m.dense if args.pose_tag == "canonical" else \
            G.denormalize(m.dense, m.scale, m.offset)
    meta = {"source": "ingest", "points": args.points, "pose_tag": args.pose_tag,
            "stride": args.stride, "retained_frames": len(result.retained_frames),
            "skipped_frames": len(result.skipped_frames)}
    out = Path(args.out)
    with run_lock(out):
        D.write_dataset(out, list(result), meta, objects)
    print(f"retained frames: {result.retained_frames}")
    if result.skipped_frames:
        print(f"warning: skipped {len(result.skipped_frames)} frame(s) with empty masks", file=sys.stderr)
    problems = D.validate_dataset(out)
    for p in problems:
        print(f"invalid: {p}", file=sys.stderr)
    return EXIT_INTERNAL if problems else EXIT_OK


def cmd_dataset_validate(args) -> int:
    problems = D.validate_dataset(args.path, args.points)
    for p in problems:
        print(f"invalid: {p}")
    if problems:
        return EXIT_USAGE
    print(f"{args.path}: ok")
    return EXIT_OK


# -------------------------------------------------------------------- train
def _model_from_config(cfg: Config) -> TR.CompletionModel:
    model = TR.CompletionModel(cfg.encoder_spec(), cfg.decoder_spec())
    return TR.init_params(model, cfg.train.init_sigma, cfg.seed)


def _split_pairs(ds: D.Dataset, n: int) -> tuple:
    train, val = ds.split("train"), ds.split("val")
    if not train:
        raise InputError("dataset has no training pairs")
    if len(train[0].partial) != n:
        raise InputError(f"dataset has {len(train[0].partial)}-point clouds, config expects {n}")
    return train, val


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.dataset:
        cfg.dataset.path = args.dataset
    if args.run_dir:
        cfg.run.dir = args.run_dir
    run_dir = Path(cfg.run.dir)
    with run_lock(run_dir):
        resolved = run_dir / "config.yaml"
        if resolved.exists() and not args.no_resume:
            previous = load_config(resolved)
            if previous.to_dict() != cfg.to_dict():
                raise InputError(f"{run_dir} holds a run with a different config; "
                                 "use a new --run-dir or --no-resume")
        if args.no_resume:
            (run_dir / TR.CHECKPOINT_NAME).unlink(missing_ok=True)
        save_config(resolved, cfg)
        ds = _load_dataset(cfg.dataset.path)
        train, val = _split_pairs(ds, cfg.dataset.points)
        model = _model_from_config(cfg)
        extra = {"points": cfg.dataset.points, "pose_tag": cfg.dataset.pose_tag, "profile": cfg.profile}

        def progress(epoch, history, seconds):
            vals = [r for r in history if r["epoch"] == epoch]
            text = " ".join(f"{r['split']}_emd={r['emd']:.5f}" for r in vals)
            print(f"epoch {epoch}/{cfg.train.epochs} {text} ({seconds:.1f}s)", flush=True)

        history = TR.fit(model, train, val, cfg.train_config(), run_dir, resume=not args.no_resume,
                         stop_after=args.stop_after, progress=None if args.quiet else progress,
                         extra=extra)
        for metric in ("emd", "cd"):
            (run_dir / f"{metric}.svg").write_text(plots.history_plot(history, metric))
    print(f"run directory: {run_dir}")
    return EXIT_OK


# --------------------------------------------------------------------- eval
def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise InputError(f"checkpoint not found: {ckpt_path}")
    ckpt = TR.load_checkpoint(ckpt_path)
    model = ckpt.build_model()
    ds = _load_dataset(args.dataset)
    pairs = ds.pairs if args.split == "all" else ds.split(args.split)
    if not pairs:
        raise InputError(f"split {args.split!r} is empty")
    if len(pairs[0].complete) % model.dec_spec.surfaces:
        raise InputError("dataset point count does not split over the model's surfaces")
    report = TR.evaluate(model, pairs, ds.objects or None)
    if not report.oracle:
        report.oracle = TR.oracle_rows({p.object_name: p.complete for p in pairs}, len(pairs[0].complete))
    out = Path(args.out or ckpt_path.parent / f"eval_{args.split}")
    with run_lock(out):
        (out / "report.json").write_text(report.to_json() + "\n")
        write_report_csv(out / "per_object.csv", report)
        for metric in ("emd", "cd"):
            if ckpt.history:
                (out / f"{metric}.svg").write_text(plots.history_plot(ckpt.history, metric))
        snap = {}
        seen = set()
        for p in pairs:
            if p.object_name in seen:
                continue
            seen.add(p.object_name)
            pred = model.complete(p.partial.points, len(p.complete))
            snap[f"{p.object_name} partial"] = p.partial.points
            snap[f"{p.object_name} output"] = pred
            snap[f"{p.object_name} truth"] = p.complete.points
            if len(seen) >= 3:
                break
        (out / "snapshot.svg").write_text(plots.scatter_views(snap, "completion snapshot"))
    print(json.dumps({"cd": report.cd, "emd": report.emd, "split": args.split}))
    return EXIT_OK


def write_report_csv(path, report: M.MetricReport) -> None:
    lines = ["object,cd,emd"]
    for name, (cd, emd) in sorted(report.per_object.items()):
        lines.append(f"{name},{cd!r},{emd!r}")
    lines.append(f"average,{report.cd!r},{report.emd!r}")
    for name, (cd, emd) in sorted((report.oracle or {}).items()):
        lines.append(f"oracle:{name},{cd!r},{emd!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------- complete
def cmd_complete(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise InputError(f"checkpoint not found: {ckpt_path}")
    if not Path(args.input).exists():
        raise InputError(f"input cloud not found: {args.input}")
    ckpt = TR.load_checkpoint(ckpt_path)
    model = ckpt.build_model()
    cloud = io.read_cloud(args.input)
    if len(cloud) == 0:
        raise InputError(f"{args.input} holds no points")
    n_in = int(ckpt.extra.get("points", model.dec_spec.out_points))
    partial = G.farthest_point_sample(cloud, n_in).points
    out_points = args.resolution or model.dec_spec.out_points
    if out_points % model.dec_spec.surfaces:
        raise InputError(f"--resolution {out_points} is not a multiple of the model's "
                         f"{model.dec_spec.surfaces} surfaces")
    pred = model.complete(partial, out_points, seed=args.seed)
    ids = None
    if args.surface_ids:
        ids = [surface_of(i, model.dec_spec, out_points) for i in range(out_points)]
        Path(str(args.output) + ".surface").write_text("\n".join(map(str, ids)) + "\n")
    io.write_cloud(args.output, pred)
    print(f"wrote {out_points} points to {args.output}")
    if args.ground_truth:
        truth = io.read_cloud(args.ground_truth).points
        cd = M.chamfer(pred, truth)
        if len(truth) == len(pred):
            emd = TR._emd_value(pred, truth)
            print(json.dumps({"cd": cd, "emd": emd}))
        else:
            print(json.dumps({"cd": cd, "emd": None,
                              "note": "emd needs equal point counts"}))
    return EXIT_OK


# ------------------------------------------------------------------- ablate
def cmd_ablate(args) -> int:
    cfg = _config(args)
    if args.dataset:
        cfg.dataset.path = args.dataset
    ds = _load_dataset(cfg.dataset.path)
    train, val = _split_pairs(ds, cfg.dataset.points)
    grid = TR.ablation_grid(args.variants.split(","), args.distributions.split(";"),
                            [int(k) for k in args.surfaces.split(",")])
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    with run_lock(out):
        save_config(out / "config.yaml", cfg)
        rows = TR.run_ablation(grid, train, val, cfg.train_config(), seeds, out)
        TR.write_ablation_csv(out / "ablation.csv", rows)
        (out / "ablation.json").write_text(json.dumps(rows, indent=2, default=float) + "\n")
        series = {}
        for r in rows:
            key = f"{r['variant']} {r['seed_distribution']} K={r['surfaces']}"
            series.setdefault(key, ([], []))
            series[key][0].append(r["seed"])
            series[key][1].append(r["val_emd"])
        (out / "ablation_emd.svg").write_text(
            plots.line_plot(series, "validation EMD per cell", "seed", "emd"))
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        print(f"{r['variant']:5s} {r['seed_distribution']:14s} K={r['surfaces']:<3d} seed={r['seed']} "
              f"val_emd={r['val_emd']:.5f} {r['status']}")
    return EXIT_INTERNAL if failed else EXIT_OK


# ------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapecomp", description="Point-cloud shape completion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, loss=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--profile", choices=("toy", "full"))
        if loss:
            p.add_argument("--loss", choices=TR.LOSSES)
            p.add_argument("--epochs", type=int)

    ds = sub.add_parser("dataset", help="synthesize, ingest or validate datasets")
    dsub = ds.add_subparsers(dest="dataset_command", required=True)
    p = dsub.add_parser("synth")
    common(p)
    p.add_argument("--out")
    p.add_argument("--poses-per-family", type=int)
    p.add_argument("--pose-tag", choices=D.POSE_TAGS)
    p.add_argument("--families", help="comma-separated subset of " + ",".join(D.FAMILIES))
    p.set_defaults(func=cmd_dataset_synth)

    p = dsub.add_parser("ingest")
    p.add_argument("--depth-dir", required=True)
    p.add_argument("--label-dir", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--models", required=True, help="directory of <label>_<name>.xyz models")
    p.add_argument("--pose-dir")
    p.add_argument("--pose-tag", choices=D.POSE_TAGS, default="canonical")
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_ingest)

    p = dsub.add_parser("validate")
    p.add_argument("path")
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_dataset_validate)

    p = sub.add_parser("train", help="train a model")
    common(p, loss=True)
    p.add_argument("--dataset")
    p.add_argument("--run-dir")
    p.add_argument("--no-resume", action="store_true")
    p.add_argument("--stop-after", type=int, help=argparse.SUPPRESS)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="complete one partial cloud")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--resolution", type=int)
    p.add_argument("--surface-ids", action="store_true", help="also write <output>.surface")
    p.add_argument("--ground-truth")
    p.add_argument("--seed", type=int, default=TR.EVAL_SEED)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    common(p, loss=True)
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="TMLP")
    p.add_argument("--distributions", default="uniform(0,1)", help="';'-separated")
    p.add_argument("--surfaces", default="16")
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError, FileNotFoundError, G.EmptyCloudError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TR.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
