"""Frequency-domain beamforming of shot gathers into dispersion images.

The beam power at (velocity, frequency) is e^H R e with R the spatiospectral
correlation matrix of the receiver spectra and e the steering vector; since a
single stacked shot gives rank-one R = X X^H this reduces to |e^H X|^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import ValidationError
from .elastodyn import ShotGather


@dataclass(frozen=True)
class DispersionGrid:
    """Frequency/velocity raster; velocity values are bin left edges."""

    f_min_hz: float = 5.0
    f_max_hz: float = 80.0
    f_step_hz: float = 1.0
    v_min_mps: float = 100.0
    v_max_mps: float = 1000.0
    v_step_mps: float = 2.25

    def validate(self) -> None:
        if not (0 < self.f_min_hz <= self.f_max_hz and self.f_step_hz > 0):
            raise ValidationError("invalid frequency range")
        if not (0 < self.v_min_mps < self.v_max_mps and self.v_step_mps > 0):
            raise ValidationError("invalid velocity range")

    @property
    def frequencies_hz(self) -> np.ndarray:
        n = round((self.f_max_hz - self.f_min_hz) / self.f_step_hz) + 1
        return self.f_min_hz + self.f_step_hz * np.arange(n)

    @property
    def velocities_mps(self) -> np.ndarray:
        n = round((self.v_max_mps - self.v_min_mps) / self.v_step_mps)
        return self.v_min_mps + self.v_step_mps * np.arange(n)

    @property
    def shape(self) -> tuple:
        return (len(self.velocities_mps), len(self.frequencies_hz))


@dataclass(frozen=True)
class SteeringMode:
    kind: str = "plane"
    weighting: str = "none"

    def validate(self) -> None:
        if self.kind not in ("plane", "cylindrical"):
            raise ValidationError(f"unknown steering kind {self.kind!r}")
        if self.weighting not in ("none", "sqrt_distance"):
            raise ValidationError(f"unknown weighting {self.weighting!r}")
        # The two supported pairings: plane waves for 2D synthetics,
        # cylindrical spreading compensation for 3D field data.
        if self.kind == "plane" and self.weighting != "none":
            raise ValidationError("plane steering pairs with weighting='none'")
        if self.kind == "cylindrical" and self.weighting != "sqrt_distance":
            raise ValidationError("cylindrical steering pairs with weighting='sqrt_distance'")


PLANE = SteeringMode("plane", "none")
CYLINDRICAL = SteeringMode("cylindrical", "sqrt_distance")


@dataclass
class DispersionImage:
    """Beam power over the grid; rows are velocities, columns frequencies."""

    power: np.ndarray
    grid: DispersionGrid
    normalization: str  # raw | per_frequency | absolute_max
    provenance: dict = field(default_factory=dict)
    degenerate_columns: np.ndarray | None = None

    def __post_init__(self):
        if self.degenerate_columns is None:
            self.degenerate_columns = np.zeros(self.power.shape[1], dtype=bool)

    @property
    def is_degenerate(self) -> bool:
        return bool(self.degenerate_columns.all())


def fdbf(gather: ShotGather, grid: DispersionGrid | None = None,
         mode: SteeringMode = PLANE) -> DispersionImage:
    """Transform a gather into a raw (unnormalized) dispersion image."""
    if grid is None:
        grid = DispersionGrid()
    grid.validate()
    mode.validate()
    if gather.geometry.n_receivers < 2:
        raise ValidationError("fdbf needs at least two receivers")

    traces = np.asarray(gather.traces, dtype=np.float64)
    n_rec, n_samp = traces.shape
    rx = np.asarray(gather.geometry.receiver_x_m, dtype=np.float64)
    spectra = np.fft.rfft(traces, axis=1)
    n_bins = spectra.shape[1]

    freqs = grid.frequencies_hz
    vels = grid.velocities_mps
    power = np.zeros((len(vels), len(freqs)))
    degenerate = np.zeros(len(freqs), dtype=bool)

    r = np.abs(rx - gather.geometry.source_x_m)
    weights = np.sqrt(r) if mode.weighting == "sqrt_distance" else np.ones(n_rec)

    inv_v = 1.0 / vels
    for fi, f in enumerate(freqs):
        # nearest FFT bin; exact when the record length is a multiple of 1/f_step
        b = min(n_bins - 1, round(f * n_samp / gather.rate_hz))
        x = spectra[:, b] * weights
        if not np.any(x):
            degenerate[fi] = True
            continue
        k = 2.0 * np.pi * f * inv_v  # trial wavenumbers
        if mode.kind == "plane":
            phases = np.outer(k, rx)
        else:
            # outgoing cylindrical wavefront: asymptotic Hankel phase kr - pi/4
            phases = np.outer(k, r) - np.pi / 4.0
        beam = np.exp(1j * phases) @ x  # rows: conj(steering) . spectra
        power[:, fi] = np.abs(beam) ** 2
    return DispersionImage(power, grid, "raw",
                           provenance=_provenance(gather, mode),
                           degenerate_columns=degenerate)


def _provenance(gather: ShotGather, mode: SteeringMode) -> dict:
    return {
        "n_receivers": gather.geometry.n_receivers,
        "receiver_x_m": list(gather.geometry.receiver_x_m),
        "source_x_m": gather.geometry.source_x_m,
        "rate_hz": gather.rate_hz,
        "source": {"kind": gather.source.kind, **gather.source.params},
        "steering": mode.kind,
        "weighting": mode.weighting,
    }


def normalize_per_frequency(image: DispersionImage) -> DispersionImage:
    """Divide each frequency column by its own maximum power."""
    power = image.power.copy()
    col_max = power.max(axis=0)
    degenerate = col_max <= 0.0
    scale = np.where(degenerate, 1.0, col_max)
    power /= scale[None, :]
    power[:, degenerate] = 0.0
    return DispersionImage(power, image.grid, "per_frequency",
                           provenance=dict(image.provenance),
                           degenerate_columns=degenerate | image.degenerate_columns)


def normalize_absolute_max(image: DispersionImage) -> DispersionImage:
    gmax = image.power.max()
    power = image.power / gmax if gmax > 0 else image.power.copy()
    return DispersionImage(power, image.grid, "absolute_max",
                           provenance=dict(image.provenance),
                           degenerate_columns=image.degenerate_columns.copy())


def stack_offsets(images: list) -> DispersionImage:
    """Combine raw images from several source offsets into one normalized image.

    Each image is scaled by its own absolute maximum so near shots do not
    dominate far shots, summed, then per-frequency normalized.
    """
    if not images:
        raise ValidationError("stack_offsets needs at least one image")
    grid = images[0].grid
    for im in images[1:]:
        if im.grid != grid:
            raise ValidationError("stack_offsets: dispersion grids differ")
    total = np.zeros_like(images[0].power)
    for im in images:
        gmax = im.power.max()
        total += im.power / gmax if gmax > 0 else im.power
    provenance = {"stacked_from": [im.provenance for im in images]}
    summed = DispersionImage(total, grid, "raw", provenance=provenance)
    return normalize_per_frequency(summed)


def extract_peaks(image: DispersionImage) -> list:
    """Per-frequency (f, v) of maximum power; ties resolve to the lower velocity."""
    if image.normalization == "raw":
        raise ValidationError("extract_peaks expects a normalized image")
    freqs = image.grid.frequencies_hz
    vels = image.grid.velocities_mps
    peaks = []
    for fi, f in enumerate(freqs):
        if image.degenerate_columns[fi]:
            continue
        vi = int(np.argmax(image.power[:, fi]))  # argmax returns the first (lowest v)
        peaks.append((float(f), float(vels[vi])))
    return peaks


@dataclass(frozen=True)
class LimitCurve:
    """Constant-wavelength acquisition limit rendered as v(f) = f * wavelength."""

    wavelength_m: float
    label: str

    @property
    def degenerate(self) -> bool:
        return self.wavelength_m <= 0.0

    def velocity_at(self, f_hz) -> np.ndarray:
        return np.asarray(f_hz, dtype=float) * self.wavelength_m


def alias_limit(receiver_spacing_m: float) -> LimitCurve:
    """Spatial aliasing limit: two samples per wavelength."""
    if receiver_spacing_m <= 0:
        raise ValidationError("receiver spacing must be positive")
    return LimitCurve(2.0 * receiver_spacing_m, "aliasing")


def nearfield_limit(source_x_m: float, receiver_x_m) -> LimitCurve:
    """Near-field limit: twice the source-to-array-center distance."""
    rx = np.asarray(receiver_x_m, dtype=float)
    if rx.size == 0:
        raise ValidationError("nearfield_limit needs receiver positions")
    center = float(np.mean(rx))
    return LimitCurve(2.0 * abs(center - source_x_m), "near-field")


def compare_images(a: DispersionImage, b: DispersionImage) -> float:
    """MSSIM between two per-frequency-normalized images (dynamic range 1)."""
    if a.grid != b.grid:
        raise ValidationError("compare_images: dispersion grids differ")
    for im in (a, b):
        if im.normalization != "per_frequency":
            raise ValidationError("compare_images expects per_frequency images")
    return metrics.mssim(a.power, b.power, metrics.dispersion_metric_config())
