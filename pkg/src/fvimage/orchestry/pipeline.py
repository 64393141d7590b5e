"""Dataset pipeline, acquisition-variant experiment runner, field utilities."""

from __future__ import annotations

import csv as csvmod
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .. import beamform, elastodyn, geomodel, metrics, neuralvision
from ..errors import DataError, FvimageError, ValidationError
from . import fvbin
from .config import (ExperimentConfig, PipelineConfig, Variant, parse_source_name,
                     parse_variant)
from .manifest import Manifest


def model_relpath(index: int) -> str:
    return os.path.join("models", f"model_{index:05d}.fvbin")


def gather_relpath(index: int, tag: str) -> str:
    return os.path.join("gathers", tag, f"model_{index:05d}.fvbin")


def image_relpath(index: int, tag: str) -> str:
    return os.path.join("images", tag, f"model_{index:05d}.fvbin")


# ---------------------------------------------------------------------------
# model generation


def build_models(cfg: PipelineConfig, out_dir, count=None, seed=None) -> list:
    """Generate the model family and write one FVBIN per model."""
    spec = cfg.geomodel
    if seed is not None:
        spec = geomodel.with_spec_overrides(spec, seed=seed)
    count = count if count is not None else cfg.experiment.dataset_size
    manifest = Manifest(out_dir)
    paths = []
    for index in range(count):
        model = geomodel.generate_model(spec, index)
        rel = model_relpath(index)
        fvbin.save_model(os.path.join(out_dir, rel), model)
        manifest.add(rel, "genmodels", {"seed": spec.seed, "index": index})
        paths.append(rel)
    manifest.save()
    return paths


# ---------------------------------------------------------------------------
# simulation


def _variant_source_and_duration(cfg: PipelineConfig, source_name: str | None):
    source = (parse_source_name(source_name) if source_name
              else cfg.experiment.base_source())
    duration = cfg.elastodyn.duration_s
    if source.kind == "linear_chirp":
        duration = source.params["sweep_s"] + cfg.experiment.chirp_tail_s
    return source, duration


def simulate_base_gather(cfg: PipelineConfig, refined: geomodel.VelocityModel,
                         offset_m=None, source_name=None) -> elastodyn.ShotGather:
    exp = cfg.experiment
    offset = exp.source_offset_m if offset_m is None else offset_m
    geometry = elastodyn.AcquisitionGeometry.linear(
        exp.first_receiver_x_m, exp.receiver_spacing_m, exp.n_receivers, offset)
    source, duration = _variant_source_and_duration(cfg, source_name)
    sim = replace(cfg.elastodyn, duration_s=duration)
    return elastodyn.simulate(refined, geometry, source, sim)


def _sim_worker(args):
    config_path_state, model_file, out_file, offset_m, source_name = args
    cfg = config_path_state
    model = fvbin.load_model(model_file)
    refined = geomodel.refine(model, cfg.elastodyn.grid_pixel_m)
    gather = simulate_base_gather(cfg, refined, offset_m, source_name)
    fvbin.save_gather(out_file, gather,
                      provenance={"model_index": model.index,
                                  "offset_m": offset_m, "source": source_name})
    return out_file


def simulate_models(cfg: PipelineConfig, out_dir, model_rels, tag="base",
                    offset_m=None, source_name=None) -> list:
    """Simulate one shot per model; parallel across models when configured."""
    manifest = Manifest(out_dir)
    jobs, rels = [], []
    for rel in model_rels:
        index = int(os.path.basename(rel).split("_")[1].split(".")[0])
        out_rel = gather_relpath(index, tag)
        jobs.append((cfg, os.path.join(out_dir, rel),
                     os.path.join(out_dir, out_rel), offset_m, source_name))
        rels.append(out_rel)
    workers = cfg.experiment.effective_workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_sim_worker, jobs))
    else:
        for job in jobs:
            _sim_worker(job)
    for out_rel in rels:
        manifest.add(out_rel, "simulate",
                     {"tag": tag, "offset_m": offset_m, "source": source_name})
    manifest.save()
    return rels


# ---------------------------------------------------------------------------
# dispersion imaging


def disperse_gather(gather: elastodyn.ShotGather, cfg: PipelineConfig,
                    normalized=True) -> beamform.DispersionImage:
    image = beamform.fdbf(gather, cfg.beamform_grid, cfg.steering)
    return beamform.normalize_per_frequency(image) if normalized else image


def disperse_files(cfg: PipelineConfig, out_dir, gather_rels, tag="base") -> list:
    manifest = Manifest(out_dir)
    rels = []
    for rel in gather_rels:
        index = int(os.path.basename(rel).split("_")[1].split(".")[0])
        gather = fvbin.load_gather(os.path.join(out_dir, rel))
        image = disperse_gather(gather, cfg)
        out_rel = image_relpath(index, tag)
        fvbin.save_image(os.path.join(out_dir, out_rel), image)
        manifest.add(out_rel, "disperse", {"tag": tag})
        rels.append(out_rel)
    manifest.save()
    return rels


# ---------------------------------------------------------------------------
# training dataset assembly


def true_crop(cfg: PipelineConfig, model: geomodel.VelocityModel) -> np.ndarray:
    """Ground-truth Vs image (m/s) under the receiver array at 1 m pixels."""
    window = cfg.experiment.crop_window(model.depth_m)
    cropped = geomodel.crop(model, window)
    if abs(cropped.pixel_m - cfg.experiment.target_pixel_m) > 1e-9:
        cropped = geomodel.refine(cropped, cfg.experiment.target_pixel_m)
    return cropped.vs


def load_dataset(cfg: PipelineConfig, out_dir, tag="base"):
    """Pair dispersion images with true Vs crops, ordered by model index."""
    manifest = Manifest(out_dir)
    image_rels = [p for p in manifest.list_stage("disperse")
                  if os.path.dirname(p).endswith(tag)]
    if not image_rels:
        raise DataError(f"no dispersion images with tag {tag!r} under {out_dir}")
    inputs, targets, indices = [], [], []
    for rel in sorted(image_rels):
        index = int(os.path.basename(rel).split("_")[1].split(".")[0])
        manifest.verify(rel)
        image = fvbin.load_image(os.path.join(out_dir, rel))
        model_rel = model_relpath(index)
        manifest.verify(model_rel)
        model = fvbin.load_model(os.path.join(out_dir, model_rel))
        inputs.append(image.power.astype(np.float32))
        targets.append(true_crop(cfg, model).astype(np.float32))
        indices.append(index)
    return np.stack(inputs), np.stack(targets), np.array(indices)


def train_network(cfg: PipelineConfig, inputs, targets_mps):
    """Normalize targets by the training-split max and run the trainer."""
    n = len(inputs)
    tr_idx, _, _ = neuralvision.split_indices(n, cfg.train.split, cfg.train.seed)
    if len(tr_idx) == 0:
        raise ValidationError("training split is empty; enlarge the dataset")
    vs_norm_max = float(np.max(targets_mps[tr_idx]))
    train_cfg = replace(cfg.train, vs_norm_max=vs_norm_max)
    arch = neuralvision.PRESETS[cfg.network]()
    result = neuralvision.train(inputs, targets_mps / vs_norm_max, train_cfg,
                                architecture=arch)
    return result


def write_training_curves(path, result: neuralvision.TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csvmod.writer(fh)
        writer.writerow(["epoch", "train_mae", "val_mae", "val_mape_percent"])
        for e, tm in enumerate(result.train_mae):
            vm = result.val_mae[e] if e < len(result.val_mae) else ""
            vp = result.val_mape[e] if e < len(result.val_mape) else ""
            writer.writerow([e, f"{tm:.6f}",
                             f"{vm:.6f}" if vm != "" else "",
                             f"{vp:.4f}" if vp != "" else ""])


# ---------------------------------------------------------------------------
# experiment runner (acquisition-variant matrix)


@dataclass
class ReportRow:
    model_index: int
    interface_class: str
    variant: str
    mape_percent: float
    mssim: float


@dataclass
class ExperimentReport:
    rows: list
    discards: list
    mssim_dynamic_range: float

    def aggregates(self) -> list:
        """Per-variant (variant, mean MAPE, mean MSSIM, count), insertion order."""
        order, groups = [], {}
        for row in self.rows:
            if row.variant not in groups:
                groups[row.variant] = []
                order.append(row.variant)
            groups[row.variant].append(row)
        out = []
        for variant in order:
            rows = groups[variant]
            out.append((variant,
                        float(np.mean([r.mape_percent for r in rows])),
                        float(np.mean([r.mssim for r in rows])),
                        len(rows)))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csvmod.writer(fh)
            writer.writerow(["model_index", "interface_class", "variant",
                             "mape_percent", "mssim"])
            for r in self.rows:
                writer.writerow([r.model_index, r.interface_class, r.variant,
                                 f"{r.mape_percent:.4f}", f"{r.mssim:.6f}"])

    def summary(self) -> str:
        lines = [f"{'variant':<14} {'images':>6} {'MAPE %':>8} {'MSSIM':>7}"]
        for variant, mape_mean, mssim_mean, count in self.aggregates():
            lines.append(f"{variant:<14} {count:>6d} {mape_mean:>8.2f} {mssim_mean:>7.3f}")
        if self.discards:
            lines.append(f"discarded runs: {len(self.discards)}")
            for d in self.discards:
                lines.append(f"  model {d['model_index']} variant {d['variant']}: "
                             f"{d['error']}")
        return "\n".join(lines)


def stratified_subset(models: list, n: int, class_mix) -> list:
    """First-n per class so the interface-class ratios are preserved exactly."""
    if n > len(models):
        raise ValidationError(f"asked for {n} models, have {len(models)}")
    counts = [round(n * m) for m in class_mix]
    counts[-1] = n - sum(counts[:-1])
    chosen = []
    for cls, want in zip(geomodel.INTERFACE_CLASSES, counts):
        candidates = [m for m in models if m.interface_class == cls]
        if len(candidates) < want:
            raise ValidationError(
                f"need {want} {cls!r} models but only {len(candidates)} available")
        chosen.extend(candidates[:want])
    return sorted(chosen, key=lambda m: m.index)


def images_for_variant(cfg: PipelineConfig, refined: geomodel.VelocityModel,
                       variant: Variant, gather_cache: dict) -> beamform.DispersionImage:
    """Build the variant's normalized dispersion image, reusing cached gathers.

    Receiver-subsampling variants reuse the base wavefield directly (the
    receiver layout does not alter the physics); offset and source variants
    require their own simulations.
    """
    exp = cfg.experiment

    def base_gather():
        if "base" not in gather_cache:
            gather_cache["base"] = simulate_base_gather(cfg, refined)
        return gather_cache["base"]

    if variant.mode == "base":
        return disperse_gather(base_gather(), cfg)
    if variant.mode == "subsample":
        step = variant.subsample_step(exp.receiver_spacing_m, exp.n_receivers)
        sub = base_gather().subsample_receivers(step)
        sub = elastodyn.ShotGather(sub.traces[:variant.n_receivers],
                                   elastodyn.AcquisitionGeometry(
                                       sub.geometry.receiver_x_m[:variant.n_receivers],
                                       sub.geometry.source_x_m),
                                   sub.rate_hz, sub.source)
        return disperse_gather(sub, cfg)
    if variant.mode == "offset":
        gather = simulate_base_gather(cfg, refined, offset_m=variant.offsets_m[0])
        return disperse_gather(gather, cfg)
    if variant.mode == "stack":
        raws = []
        for off in variant.offsets_m:
            if abs(off - exp.source_offset_m) < 1e-9:
                gather = base_gather()
            else:
                key = f"off{off:g}"
                if key not in gather_cache:
                    gather_cache[key] = simulate_base_gather(cfg, refined, offset_m=off)
                gather = gather_cache[key]
            raws.append(disperse_gather(gather, cfg, normalized=False))
        return beamform.stack_offsets(raws)
    if variant.mode == "source":
        gather = simulate_base_gather(cfg, refined, source_name=variant.source_name)
        return disperse_gather(gather, cfg)
    raise ValidationError(f"unknown variant mode {variant.mode!r}")


def run_experiment(cfg: PipelineConfig, net: neuralvision.Network,
                   models: list, variant_names=None) -> ExperimentReport:
    """Evaluate the network across the acquisition-variant matrix.

    Failures are isolated per (model, variant): a rejected or unstable
    simulation is recorded as a discard and the run continues.
    """
    variant_names = list(variant_names if variant_names is not None
                         else cfg.experiment.variants)
    variants = [parse_variant(v) for v in variant_names]
    crops = {m.index: true_crop(cfg, m) for m in models}
    values = np.array([[c.min(), c.max()] for c in crops.values()])
    dynamic_range = float(values[:, 1].max() - values[:, 0].min())
    metric_cfg = metrics.MetricConfig(dynamic_range=dynamic_range)

    rows, discards = [], []
    for model in models:
        refined = geomodel.refine(model, cfg.elastodyn.grid_pixel_m)
        cache = {}
        for variant in variants:
            try:
                image = images_for_variant(cfg, refined, variant, cache)
                pred = neuralvision.predict(net, image.power.astype(np.float32))
                true = crops[model.index]
                rows.append(ReportRow(
                    model_index=model.index,
                    interface_class=model.interface_class,
                    variant=variant.name,
                    mape_percent=metrics.mape(pred.denormalized, true),
                    mssim=metrics.mssim(pred.denormalized, true, metric_cfg),
                ))
            except FvimageError as exc:
                discards.append({"model_index": model.index, "variant": variant.name,
                                 "error": str(exc)})
    return ExperimentReport(rows, discards, dynamic_range)


# ---------------------------------------------------------------------------
# field-data utilities


def import_csv(path, geometry: elastodyn.AcquisitionGeometry,
               rate_hz: float) -> elastodyn.ShotGather:
    """Read one waveform CSV (one column per receiver, header optional)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csvmod.reader(fh)
        for li, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            rows.append((li + 1, row))
    if not rows:
        raise DataError(f"{path}: no data rows")
    start = 0
    try:
        [float(c) for c in rows[0][1]]
    except ValueError:
        start = 1  # header row
    if start >= len(rows):
        raise DataError(f"{path}: only a header row present")
    width = len(rows[start][1])
    data = np.empty((len(rows) - start, width), dtype=np.float64)
    for r, (lineno, row) in enumerate(rows[start:]):
        if len(row) != width:
            raise DataError(f"{path}: ragged row at line {lineno}: "
                            f"{len(row)} cells, expected {width}")
        for c, cell in enumerate(row):
            try:
                data[r, c] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric cell {cell!r} at line {lineno}, "
                                f"column {c + 1}") from None
    if width != geometry.n_receivers:
        raise DataError(f"{path}: CSV has {width} columns but the geometry has "
                        f"{geometry.n_receivers} receivers")
    return elastodyn.ShotGather(data.T.astype(np.float32), geometry, rate_hz,
                                elastodyn.SourceFunction("impulsive", {}))


def export_gather_csv(path, gather: elastodyn.ShotGather) -> None:
    """One column per receiver; %.9g round-trips float32 exactly."""
    np.savetxt(path, gather.traces.T, delimiter=",", fmt="%.9g",
               header=",".join(f"rx_{x:g}m" for x in gather.geometry.receiver_x_m),
               comments="")


@dataclass
class ProfileSet:
    """Vertical 1D slices of a Vs image plus their lognormal median."""

    depths_m: np.ndarray
    profiles: np.ndarray  # (n_columns, n_depths)
    median: np.ndarray  # (n_depths,)


def slice_profiles(pred: neuralvision.VsImagePrediction,
                   pixel_m: float = 1.0) -> ProfileSet:
    vs = pred.denormalized
    if vs.ndim != 2 or vs.shape != (24, 48):
        raise ValidationError(f"expected a 24x48 prediction, got {vs.shape}")
    if np.any(vs <= 0):
        raise ValidationError("prediction contains nonpositive velocities")
    depths = (np.arange(vs.shape[0]) + 0.5) * pixel_m
    profiles = vs.T.copy()
    median = np.exp(np.mean(np.log(vs), axis=1))
    return ProfileSet(depths, profiles, median)


def export_profiles_csv(path, profiles: ProfileSet) -> None:
    with open(path, "w", newline="") as fh:
        writer = csvmod.writer(fh)
        writer.writerow(["depth_m"]
                        + [f"profile_{i:02d}" for i in range(profiles.profiles.shape[0])]
                        + ["lognormal_median"])
        for d in range(len(profiles.depths_m)):
            writer.writerow([f"{profiles.depths_m[d]:g}"]
                            + [f"{v:.4f}" for v in profiles.profiles[:, d]]
                            + [f"{profiles.median[d]:.4f}"])


# ---------------------------------------------------------------------------
# plotting


PLOT_COLORMAP = "viridis"  # fixed so exported plots are reproducible


def export_plot(array2d, png_path, csv_path, origin="upper") -> None:
    """Colormapped PNG plus the numeric grid as CSV (diffable)."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    arr = np.asarray(array2d, dtype=float)
    plt.imsave(png_path, arr, cmap=PLOT_COLORMAP, origin=origin)
    np.savetxt(csv_path, arr, delimiter=",", fmt="%.9g")


def export_peaks_csv(path, peaks) -> None:
    with open(path, "w", newline="") as fh:
        writer = csvmod.writer(fh)
        writer.writerow(["frequency_hz", "velocity_mps"])
        for f, v in peaks:
            writer.writerow([f"{f:g}", f"{v:g}"])
