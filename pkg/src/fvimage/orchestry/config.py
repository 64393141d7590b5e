"""TOML pipeline configuration and the acquisition-variant matrix."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .. import beamform, elastodyn, geomodel, neuralvision
from ..errors import ValidationError


def parse_source_name(name: str) -> elastodyn.SourceFunction:
    """Names like ricker30, spike15, chirp3-80 (sweep fixed at 12 s)."""
    m = re.fullmatch(r"ricker([0-9.]+)", name)
    if m:
        return elastodyn.SourceFunction.ricker(float(m.group(1)))
    m = re.fullmatch(r"spike([0-9.]+)", name)
    if m:
        return elastodyn.SourceFunction.filtered_spike(float(m.group(1)))
    m = re.fullmatch(r"chirp([0-9.]+)-([0-9.]+)", name)
    if m:
        return elastodyn.SourceFunction.linear_chirp(float(m.group(1)), float(m.group(2)))
    raise ValidationError(f"unknown source name {name!r}")


def source_display_name(source: elastodyn.SourceFunction) -> str:
    if source.kind == "ricker":
        return f"ricker{source.params['center_hz']:g}"
    if source.kind == "filtered_spike":
        return f"spike{source.params['highcut_hz']:g}"
    return f"chirp{source.params['f0_hz']:g}-{source.params['f1_hz']:g}"


@dataclass(frozen=True)
class Variant:
    """One acquisition deviation from the base configuration."""

    name: str
    mode: str  # base | subsample | offset | stack | source
    n_receivers: int | None = None
    spacing_m: float | None = None
    offsets_m: tuple = ()
    source_name: str | None = None

    def subsample_step(self, base_spacing_m: float, base_n: int) -> int:
        step = self.spacing_m / base_spacing_m
        if abs(step - round(step)) > 1e-9 or round(step) < 1:
            raise ValidationError(
                f"variant {self.name}: spacing {self.spacing_m} m is not a multiple "
                f"of the base spacing {base_spacing_m} m")
        step = round(step)
        available = (base_n + step - 1) // step
        if available < self.n_receivers:
            raise ValidationError(
                f"variant {self.name}: base array provides only {available} receivers "
                f"at {self.spacing_m} m spacing, need {self.n_receivers}")
        return step


def parse_variant(name: str) -> Variant:
    if name == "base":
        return Variant(name, "base")
    m = re.fullmatch(r"rx(\d+)@([0-9.]+)", name)
    if m:
        return Variant(name, "subsample", n_receivers=int(m.group(1)),
                       spacing_m=float(m.group(2)))
    m = re.fullmatch(r"off([0-9.]+)", name)
    if m:
        return Variant(name, "offset", offsets_m=(float(m.group(1)),))
    m = re.fullmatch(r"stack([0-9.]+)\+([0-9.]+)", name)
    if m:
        return Variant(name, "stack", offsets_m=(float(m.group(1)), float(m.group(2))))
    try:
        parse_source_name(name)
    except ValidationError:
        raise ValidationError(f"unknown variant name {name!r}") from None
    return Variant(name, "source", source_name=name)


DEFAULT_VARIANTS = (
    "base",
    "rx24@2", "rx16@3", "rx12@4",
    "off6", "off10", "off20",
    "stack5+20", "stack10+20",
    "spike15", "chirp3-80",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Acquisition layout, dataset scale, and the variant matrix."""

    dataset_size: int = 320
    n_receivers: int = 48
    receiver_spacing_m: float = 1.0
    first_receiver_x_m: float = 28.0
    source_offset_m: float = 5.0
    source: str = "ricker30"
    variants: tuple = DEFAULT_VARIANTS
    chirp_tail_s: float = 1.0  # recorded time after the sweep ends
    crop_width_m: float = 48.0
    target_pixel_m: float = 1.0
    workers: int = 1
    eval_models: int = 10  # per-variant model count for `evaluate`

    def validate(self) -> None:
        if self.dataset_size < 1:
            raise ValidationError("dataset_size must be positive")
        if self.n_receivers < 2:
            raise ValidationError("need at least two receivers")
        for name in ("receiver_spacing_m", "crop_width_m", "target_pixel_m"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for v in self.variants:
            parse_variant(v)
        parse_source_name(self.source)

    def base_geometry(self) -> elastodyn.AcquisitionGeometry:
        return elastodyn.AcquisitionGeometry.linear(
            self.first_receiver_x_m, self.receiver_spacing_m, self.n_receivers,
            self.source_offset_m)

    def base_source(self) -> elastodyn.SourceFunction:
        return parse_source_name(self.source)

    def crop_window(self, depth_m: float) -> geomodel.CropWindow:
        return geomodel.CropWindow(
            self.first_receiver_x_m, self.first_receiver_x_m + self.crop_width_m, depth_m)

    @property
    def effective_workers(self) -> int:
        env = os.environ.get("FVX_WORKERS")
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ValidationError(f"FVX_WORKERS={env!r} is not an integer") from None
        return max(1, self.workers)


@dataclass
class PipelineConfig:
    geomodel: geomodel.ModelSpec = field(default_factory=geomodel.ModelSpec)
    elastodyn: elastodyn.SimConfig = field(default_factory=elastodyn.SimConfig)
    beamform_grid: beamform.DispersionGrid = field(default_factory=beamform.DispersionGrid)
    steering: beamform.SteeringMode = beamform.PLANE
    train: neuralvision.TrainConfig = field(default_factory=neuralvision.TrainConfig)
    network: str = "freq_velocity"
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> None:
        self.geomodel.validate()
        self.elastodyn.validate()
        self.beamform_grid.validate()
        self.steering.validate()
        self.train.validate()
        if self.network not in neuralvision.PRESETS:
            raise ValidationError(f"unknown network preset {self.network!r}")
        self.experiment.validate()
        geom = self.experiment.base_geometry()
        last = geom.receiver_x_m[-1]
        if geom.source_x_m < 0 or last > self.geomodel.width_m:
            raise ValidationError(
                f"acquisition [{geom.source_x_m}, {last}] m does not fit in the "
                f"{self.geomodel.width_m} m model"
            )
        if (self.experiment.first_receiver_x_m + self.experiment.crop_width_m
                > self.geomodel.width_m):
            raise ValidationError("crop window extends past the model")


def _build(dc_type, section: dict, where: str, aliases=None):
    aliases = aliases or {}
    known = {f.name for f in fields(dc_type)}
    kwargs = {}
    for key, value in section.items():
        name = aliases.get(key, key)
        if name not in known:
            raise ValidationError(f"unknown key {key!r} in [{where}]")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return dc_type(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad [{where}] section: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Parse and validate a pipeline TOML file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: invalid TOML: {exc}") from exc

    known_sections = {"geomodel", "elastodyn", "beamform", "neuralvision", "experiment"}
    unknown = set(doc) - known_sections
    if unknown:
        raise ValidationError(f"{path}: unknown sections {sorted(unknown)}")

    cfg = PipelineConfig()
    if "geomodel" in doc:
        sec = dict(doc["geomodel"])
        for key in ("undulation_bands", "undulation_ptp_m"):
            if key in sec:
                sec[key] = {k: tuple(v) for k, v in sec[key].items()}
        cfg.geomodel = _build(geomodel.ModelSpec, sec, "geomodel")
    if "elastodyn" in doc:
        cfg.elastodyn = _build(elastodyn.SimConfig, doc["elastodyn"], "elastodyn")
    if "beamform" in doc:
        sec = dict(doc["beamform"])
        steering = sec.pop("steering", None)
        cfg.beamform_grid = _build(beamform.DispersionGrid, sec, "beamform")
        if steering is not None:
            cfg.steering = (beamform.CYLINDRICAL if steering == "cylindrical"
                            else beamform.SteeringMode(steering, "none"))
    if "neuralvision" in doc:
        sec = dict(doc["neuralvision"])
        cfg.network = sec.pop("network", cfg.network)
        cfg.train = _build(neuralvision.TrainConfig, sec, "neuralvision")
    if "experiment" in doc:
        cfg.experiment = _build(ExperimentConfig, doc["experiment"], "experiment")
    cfg.validate()
    return cfg
