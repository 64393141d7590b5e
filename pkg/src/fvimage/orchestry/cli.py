"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Errors print one machine-readable JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .. import beamform, elastodyn, neuralvision
from ..errors import DataError, NumericalError, ValidationError
from . import fvbin, pipeline
from .config import load_config
from .manifest import Manifest


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "func"):
        build_parser().print_help()
        return 2
    try:
        return args.func(args) or 0
    except ValidationError as exc:
        return _fail(exc, 2)
    except DataError as exc:
        return _fail(exc, 3)
    except NumericalError as exc:
        return _fail(exc, 4)
    except FileNotFoundError as exc:
        return _fail(exc, 3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvimage",
        description="Synthetic surface-wave datasets, dispersion imaging, and "
                    "CNN shear-velocity prediction.")
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        return p

    p = add("genmodels", cmd_genmodels, "generate velocity models from the spec")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = add("simulate", cmd_simulate, "simulate shot gathers over generated models")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tag", default="base")
    p.add_argument("--offset", type=float, default=None,
                   help="source offset (m) overriding the config")
    p.add_argument("--source", default=None, help="source name, e.g. chirp3-80")

    p = add("disperse", cmd_disperse, "transform gathers into dispersion images")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="pipeline directory (batch mode)")
    p.add_argument("inputs", nargs="*", help="gather or raw-image files")
    p.add_argument("--tag", default="base")
    p.add_argument("--stack", default=None,
                   help="comma-separated source offsets to stack, e.g. 5,20")
    p.add_argument("--steering", choices=["plane", "cylindrical"], default=None)
    p.add_argument("--raw", action="store_true", help="skip per-frequency normalization")
    p.add_argument("--output", default=None, help="output file (single-image modes)")

    p = add("train", cmd_train, "train the CNN on the dispersion/model pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tag", default="base")

    p = add("predict", cmd_predict, "predict Vs images from dispersion images")
    p.add_argument("--config", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--profiles", action="store_true",
                   help="also write 1D profile slices per prediction")

    p = add("evaluate", cmd_evaluate, "run the acquisition-variant experiment matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=None, help="comma-separated variant names")
    p.add_argument("--max-models", type=int, default=None)

    p = add("peaks", cmd_peaks, "extract per-frequency peak velocities to CSV")
    p.add_argument("image")
    p.add_argument("--output", required=True)

    p = add("import-csv", cmd_import_csv, "ingest field waveform CSVs as a gather")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--rate", type=float, required=True, help="sampling rate (Hz)")
    p.add_argument("--first-x", type=float, required=True)
    p.add_argument("--spacing", type=float, required=True)
    p.add_argument("--receivers", type=int, required=True)
    p.add_argument("--source-x", type=float, required=True)
    p.add_argument("--stack", action="store_true",
                   help="time-domain stack all inputs into one gather")

    p = add("export-plot", cmd_export_plot, "render an artifact to PNG + CSV")
    p.add_argument("input")
    p.add_argument("--out-png", required=True)
    p.add_argument("--out-csv", required=True)
    return parser


def cmd_genmodels(args):
    cfg = load_config(args.config)
    rels = pipeline.build_models(cfg, args.out, count=args.count, seed=args.seed)
    print(f"wrote {len(rels)} models under {args.out}")


def cmd_simulate(args):
    cfg = load_config(args.config)
    manifest = Manifest(args.out)
    model_rels = manifest.list_stage("genmodels")
    if not model_rels:
        raise DataError(f"no generated models under {args.out}; run genmodels first")
    for rel in model_rels:
        manifest.verify(rel)
    rels = pipeline.simulate_models(cfg, args.out, model_rels, tag=args.tag,
                                    offset_m=args.offset, source_name=args.source)
    print(f"wrote {len(rels)} gathers under {args.out}")


def _override_steering(cfg, choice):
    if choice == "cylindrical":
        cfg.steering = beamform.CYLINDRICAL
    elif choice == "plane":
        cfg.steering = beamform.PLANE
    return cfg


def cmd_disperse(args):
    cfg = _override_steering(load_config(args.config), args.steering)
    if args.stack is not None or args.inputs:
        return _disperse_files(cfg, args)
    if args.out is None:
        raise ValidationError("batch mode needs --out (or pass input files)")
    manifest = Manifest(args.out)
    gather_rels = [p for p in manifest.list_stage("simulate")
                   if os.path.dirname(p).endswith(args.tag)]
    if not gather_rels:
        raise DataError(f"no gathers with tag {args.tag!r} under {args.out}")
    for rel in gather_rels:
        manifest.verify(rel)
    rels = pipeline.disperse_files(cfg, args.out, gather_rels, tag=args.tag)
    print(f"wrote {len(rels)} dispersion images under {args.out}")


def _load_raw_image(cfg, path):
    kind, _, _ = fvbin.read_fvbin(path)
    if kind == "shot_gather":
        return pipeline.disperse_gather(fvbin.load_gather(path), cfg, normalized=False)
    if kind == "dispersion_image":
        image = fvbin.load_image(path)
        if image.normalization != "raw":
            raise DataError(f"{path}: stacking needs raw images, got "
                            f"{image.normalization}")
        return image
    raise DataError(f"{path}: cannot disperse artifact of kind {kind}")


def _disperse_files(cfg, args):
    if not args.inputs:
        raise ValidationError("file mode needs input gather/image paths")
    if args.stack is not None:
        offsets = [float(tok) for tok in args.stack.split(",") if tok]
        images = [_load_raw_image(cfg, path) for path in args.inputs]
        if len(images) != len(offsets):
            raise ValidationError(
                f"--stack lists {len(offsets)} offsets but {len(images)} inputs given")
        stacked = beamform.stack_offsets(images)
        out = args.output or "stacked_image.fvbin"
        fvbin.save_image(out, stacked)
        print(f"wrote {out}")
        return
    for path in args.inputs:
        gather = fvbin.load_gather(path)
        image = pipeline.disperse_gather(gather, cfg, normalized=not args.raw)
        out = (args.output if args.output and len(args.inputs) == 1
               else os.path.splitext(path)[0] + ".image.fvbin")
        fvbin.save_image(out, image)
        print(f"wrote {out}")


def cmd_train(args):
    cfg = load_config(args.config)
    inputs, targets, _ = pipeline.load_dataset(cfg, args.out, tag=args.tag)
    result = pipeline.train_network(cfg, inputs, targets)
    manifest = Manifest(args.out)
    net_rel = os.path.join("network", "network.fvbin")
    curves_rel = os.path.join("network", "curves.csv")
    os.makedirs(os.path.join(args.out, "network"), exist_ok=True)
    fvbin.save_network(os.path.join(args.out, net_rel), result.network)
    pipeline.write_training_curves(os.path.join(args.out, curves_rel), result)
    manifest.add(net_rel, "train", {"epochs": cfg.train.epochs})
    manifest.add(curves_rel, "train", {})
    manifest.save()
    last_val = result.val_mape[-1] if result.val_mape else float("nan")
    print(f"trained {cfg.network} network: final train MAE "
          f"{result.train_mae[-1]:.4f}, val MAPE {last_val:.2f}%")


def cmd_predict(args):
    cfg = load_config(args.config)
    net = fvbin.load_network(args.network)
    os.makedirs(args.out, exist_ok=True)
    for path in args.inputs:
        image = fvbin.load_image(path)
        if image.normalization != "per_frequency":
            raise DataError(f"{path}: CNN input must be per_frequency normalized")
        pred = neuralvision.predict(net, image.power.astype(np.float32),
                                    provenance={"input": os.path.basename(path)})
        stem = os.path.splitext(os.path.basename(path))[0]
        out = os.path.join(args.out, stem + ".pred.fvbin")
        fvbin.save_prediction(out, pred)
        if args.profiles:
            profiles = pipeline.slice_profiles(pred)
            pipeline.export_profiles_csv(os.path.join(args.out, stem + ".profiles.csv"),
                                         profiles)
        print(f"wrote {out}")
    _ = cfg  # config reserved for future input checks


def cmd_evaluate(args):
    cfg = load_config(args.config)
    net = fvbin.load_network(args.network)
    manifest = Manifest(args.out)
    model_rels = manifest.list_stage("genmodels")
    if not model_rels:
        raise DataError(f"no generated models under {args.out}")
    models = []
    for rel in model_rels:
        manifest.verify(rel)
        models.append(fvbin.load_model(os.path.join(args.out, rel)))
    n = args.max_models or cfg.experiment.eval_models
    n = min(n, len(models))
    subset = pipeline.stratified_subset(models, n, cfg.geomodel.class_mix)
    variants = args.variants.split(",") if args.variants else None
    report = pipeline.run_experiment(cfg, net, subset, variants)
    os.makedirs(os.path.join(args.out, "reports"), exist_ok=True)
    report_rel = os.path.join("reports", "report.csv")
    report.to_csv(os.path.join(args.out, report_rel))
    summary = report.summary()
    with open(os.path.join(args.out, "reports", "summary.txt"), "w") as fh:
        fh.write(summary + "\n")
    manifest.add(report_rel, "evaluate", {"models": n})
    manifest.add(os.path.join("reports", "summary.txt"), "evaluate", {})
    manifest.save()
    print(summary)


def cmd_peaks(args):
    image = fvbin.load_image(args.image)
    if image.normalization == "raw":
        image = beamform.normalize_per_frequency(image)
    peaks = beamform.extract_peaks(image)
    pipeline.export_peaks_csv(args.output, peaks)
    print(f"wrote {len(peaks)} peaks to {args.output}")


def cmd_import_csv(args):
    geometry = elastodyn.AcquisitionGeometry.linear(
        args.first_x, args.spacing, args.receivers,
        source_offset_m=args.first_x - args.source_x)
    gathers = [pipeline.import_csv(path, geometry, args.rate) for path in args.inputs]
    if args.stack:
        gather = elastodyn.stack_shots(gathers)
    else:
        if len(gathers) > 1:
            raise ValidationError("multiple inputs need --stack")
        gather = gathers[0]
    fvbin.save_gather(args.output, gather,
                      provenance={"files": [os.path.basename(p) for p in args.inputs],
                                  "stacked": bool(args.stack)})
    print(f"wrote {args.output} ({gather.geometry.n_receivers} receivers x "
          f"{gather.n_samples} samples)")


def cmd_export_plot(args):
    kind, blocks, _ = fvbin.read_fvbin(args.input)
    if kind == "velocity_model":
        grid = blocks["vs"]
    elif kind == "dispersion_image":
        grid = blocks["power"][::-1, :]  # velocity increasing upward
    elif kind == "vs_prediction":
        grid = blocks["denormalized"]
    elif kind == "shot_gather":
        grid = blocks["traces"]
    else:
        raise DataError(f"{args.input}: no plot rule for kind {kind}")
    pipeline.export_plot(grid, args.out_png, args.out_csv)
    print(f"wrote {args.out_png} and {args.out_csv}")


if __name__ == "__main__":
    sys.exit(main())
