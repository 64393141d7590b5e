"""2D plane-strain elastic wave simulation over gridded velocity models.

Velocity-stress staggered grid, 6th order in space / 2nd order (leapfrog)
in time, CPML absorbing strips on the left/right/bottom edges and a
stress-image free surface on top. The source is a vertical point force at
the surface; receivers record vertical particle velocity at surface nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfiltfilt

from . import _fdkernels as fdk
from .errors import DataError, NumericalError, ValidationError
from .geomodel import VelocityModel

GHOST_ROWS = 3
PML_REFLECTION = 1e-3
PML_POLY_ORDER = 2


@dataclass(frozen=True)
class SourceFunction:
    """Surface force time history descriptor."""

    kind: str
    params: dict = field(default_factory=dict)

    @staticmethod
    def ricker(center_hz: float = 30.0) -> "SourceFunction":
        return SourceFunction("ricker", {"center_hz": float(center_hz)})

    @staticmethod
    def filtered_spike(highcut_hz: float = 15.0) -> "SourceFunction":
        return SourceFunction("filtered_spike", {"highcut_hz": float(highcut_hz)})

    @staticmethod
    def linear_chirp(f0_hz: float = 3.0, f1_hz: float = 80.0,
                     sweep_s: float = 12.0) -> "SourceFunction":
        return SourceFunction(
            "linear_chirp",
            {"f0_hz": float(f0_hz), "f1_hz": float(f1_hz), "sweep_s": float(sweep_s)},
        )

    def validate(self) -> None:
        if self.kind == "ricker":
            if self.params.get("center_hz", 0.0) <= 0:
                raise ValidationError("ricker center_hz must be positive")
        elif self.kind == "filtered_spike":
            if self.params.get("highcut_hz", 0.0) <= 0:
                raise ValidationError("filtered_spike highcut_hz must be positive")
        elif self.kind == "linear_chirp":
            f0 = self.params.get("f0_hz", 0.0)
            f1 = self.params.get("f1_hz", 0.0)
            if f0 <= 0 or f1 <= 0:
                raise ValidationError("chirp frequencies must be positive")
            if f1 <= f0:
                raise ValidationError("chirp must sweep upward (f1_hz > f0_hz)")
            if self.params.get("sweep_s", 0.0) <= 0:
                raise ValidationError("chirp sweep_s must be positive")
        else:
            raise ValidationError(f"unknown source kind {self.kind!r}")

    @property
    def max_frequency_hz(self) -> float:
        """Upper edge of significant spectral content, for grid-dispersion checks."""
        self.validate()
        if self.kind == "ricker":
            return 2.0 * self.params["center_hz"]
        if self.kind == "filtered_spike":
            return 2.0 * self.params["highcut_hz"]
        return self.params["f1_hz"]

    @property
    def dominant_frequency_hz(self) -> float:
        """Representative frequency used to tune the CPML alpha profile."""
        self.validate()
        if self.kind == "ricker":
            return self.params["center_hz"]
        if self.kind == "filtered_spike":
            return 0.5 * self.params["highcut_hz"]
        return 0.5 * (self.params["f0_hz"] + self.params["f1_hz"])


def make_source(source: SourceFunction, dt_s: float, duration_s: float) -> np.ndarray:
    """Sample the force time series on the simulation clock, unit peak."""
    source.validate()
    if dt_s <= 0 or duration_s <= 0:
        raise ValidationError("dt_s and duration_s must be positive")
    n = round(duration_s / dt_s)
    t = np.arange(n) * dt_s
    if source.kind == "ricker":
        fc = source.params["center_hz"]
        t0 = 1.5 / fc
        arg = (np.pi * fc * (t - t0)) ** 2
        w = (1.0 - 2.0 * arg) * np.exp(-arg)
    elif source.kind == "filtered_spike":
        fh = source.params["highcut_hz"]
        w = np.zeros(n)
        w[round(3.0 / fh / dt_s)] = 1.0  # pre-delay leaves room for the acausal tail
        sos = butter(4, fh, btype="low", fs=1.0 / dt_s, output="sos")
        w = sosfiltfilt(sos, w)
    else:
        f0 = source.params["f0_hz"]
        f1 = source.params["f1_hz"]
        sweep = source.params["sweep_s"]
        phase = 2.0 * np.pi * (f0 * t + 0.5 * (f1 - f0) / sweep * t**2)
        w = np.sin(phase)
        taper_s = min(0.5, 0.1 * sweep)
        ramp = np.clip(t / taper_s, 0.0, 1.0)
        tail = np.clip((sweep - t) / taper_s, 0.0, 1.0)
        w *= 0.5 * (1.0 - np.cos(np.pi * ramp)) * 0.5 * (1.0 - np.cos(np.pi * tail))
        w[t > sweep] = 0.0
    peak = np.max(np.abs(w))
    if peak > 0:
        w = w / peak
    return w


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Surface receiver line plus a surface source position (meters)."""

    receiver_x_m: tuple
    source_x_m: float

    @staticmethod
    def linear(first_receiver_x_m: float, spacing_m: float, n_receivers: int,
               source_offset_m: float) -> "AcquisitionGeometry":
        """Evenly spaced line with the source ``offset`` left of the first receiver."""
        rx = tuple(first_receiver_x_m + k * spacing_m for k in range(n_receivers))
        return AcquisitionGeometry(rx, first_receiver_x_m - source_offset_m)

    def validate(self) -> None:
        if len(self.receiver_x_m) < 1:
            raise ValidationError("geometry needs at least one receiver")
        rx = np.asarray(self.receiver_x_m)
        if np.any(np.diff(rx) <= 0):
            raise ValidationError("receiver positions must be strictly increasing")

    @property
    def n_receivers(self) -> int:
        return len(self.receiver_x_m)

    def subsample(self, step: int) -> "AcquisitionGeometry":
        """Every ``step``-th receiver (physically equivalent wider spacing)."""
        return AcquisitionGeometry(self.receiver_x_m[::step], self.source_x_m)


@dataclass
class ShotGather:
    """Vertical-component records, one row per receiver."""

    traces: np.ndarray
    geometry: AcquisitionGeometry
    rate_hz: float
    source: SourceFunction
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.traces.shape[1]

    def subsample_receivers(self, step: int) -> "ShotGather":
        return ShotGather(self.traces[::step].copy(), self.geometry.subsample(step),
                          self.rate_hz, self.source)


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 5e-5
    duration_s: float = 2.0
    record_rate_hz: float = 400.0
    grid_pixel_m: float = 0.2
    pml_thickness_cells: int = 20
    spatial_order: int = 6
    temporal_order: int = 2
    min_points_per_wavelength: float = 8.0

    def validate(self) -> None:
        if self.spatial_order != 6:
            raise ValidationError("only the 6th-order spatial operator is implemented")
        if self.temporal_order != 2:
            raise ValidationError("only 2nd-order (leapfrog) time stepping is implemented")
        for name in ("dt_s", "duration_s", "record_rate_hz", "grid_pixel_m"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.pml_thickness_cells < 4:
            raise ValidationError("pml_thickness_cells must be at least 4")
        stride = 1.0 / (self.record_rate_hz * self.dt_s)
        if abs(stride - round(stride)) > 1e-6:
            raise ValidationError(
                f"record_rate_hz must divide 1/dt_s: got {1.0 / self.dt_s:.6g} Hz solver "
                f"clock vs {self.record_rate_hz:.6g} Hz recording"
            )

    @property
    def record_stride(self) -> int:
        return round(1.0 / (self.record_rate_hz * self.dt_s))


def courant_number(vp_max: float, dt_s: float, h_m: float) -> float:
    return vp_max * dt_s * math.sqrt(2.0) * fdk.SUM_ABS_C6 / h_m


def _cpml_profiles(n: int, npml: int, h: float, dt: float, vp_max: float,
                   f_dom: float, low_side: bool, high_side: bool):
    """CPML recursion coefficients (a, b) for one axis, full and half nodes."""
    d0 = (PML_POLY_ORDER + 1) * vp_max * math.log(1.0 / PML_REFLECTION) / (2.0 * npml * h)
    alpha_max = math.pi * f_dom
    out = []
    for offset in (0.0, 0.5):
        pos = np.arange(n) + offset
        depth = np.zeros(n)
        if low_side:
            depth = np.maximum(depth, (npml - pos) / npml)
        if high_side:
            depth = np.maximum(depth, (pos - (n - npml)) / npml)
        depth = np.clip(depth, 0.0, 1.0)
        d = d0 * depth**PML_POLY_ORDER
        alpha = alpha_max * (1.0 - depth)
        b = np.exp(-(d + alpha) * dt)
        a = np.where(d > 0, d * (b - 1.0) / np.where(d > 0, d + alpha, 1.0), 0.0)
        out.append((a.astype(np.float32), b.astype(np.float32)))
    (a_full, b_full), (a_half, b_half) = out
    return a_full, b_full, a_half, b_half


def _staggered_materials(model: VelocityModel, npml: int):
    pad = ((GHOST_ROWS, npml), (npml, npml))
    vs = np.pad(model.vs, pad, mode="edge")
    vp = np.pad(model.vp, pad, mode="edge")
    rho = np.pad(model.rho, pad, mode="edge")
    mu = rho * vs**2
    lam = rho * vp**2 - 2.0 * mu
    l2m = rho * vp**2

    def shift(arr, dj, di):
        out = arr
        if di:
            out = np.concatenate([out[:, di:], out[:, -1:]], axis=1)
        if dj:
            out = np.concatenate([out[dj:, :], out[-1:, :]], axis=0)
        return out

    buoy_x = 2.0 / (rho + shift(rho, 0, 1))
    buoy_z = 2.0 / (rho + shift(rho, 1, 0))
    mu_xz = 4.0 / (1.0 / mu + 1.0 / shift(mu, 0, 1) + 1.0 / shift(mu, 1, 0)
                   + 1.0 / shift(mu, 1, 1))
    surf = GHOST_ROWS
    surf_modulus = (4.0 * mu[surf] * (lam[surf] + mu[surf]) / l2m[surf])
    f32 = np.float32
    return (lam.astype(f32), l2m.astype(f32), mu_xz.astype(f32),
            buoy_x.astype(f32), buoy_z.astype(f32), surf_modulus.astype(f32),
            (1.0 / buoy_x).astype(f32), (1.0 / buoy_z).astype(f32))


def simulate(model: VelocityModel, geometry: AcquisitionGeometry,
             source: SourceFunction, config: SimConfig,
             energy_stride: int | None = None) -> ShotGather:
    """Run one shot and return the decimated vertical-component gather.

    With ``energy_stride`` set, the gather's diagnostics carry the discrete
    interior elastic energy sampled every that many steps.
    """
    config.validate()
    geometry.validate()
    source.validate()
    h = config.grid_pixel_m
    if abs(model.pixel_m - h) > 1e-9:
        raise ValidationError(
            f"model pixel {model.pixel_m} m differs from grid pixel {h} m; refine first"
        )
    nz_phys, nx_phys = model.vs.shape
    width = nx_phys * h

    vp_max = float(model.vp.max())
    courant = courant_number(vp_max, config.dt_s, h)
    if courant > 1.0:
        raise NumericalError(
            f"CFL violated: Courant number {courant:.3f} > 1 "
            f"(vp_max={vp_max:.1f} m/s, dt={config.dt_s:g} s, h={h:g} m)"
        )
    vs_min = float(model.vs.min())
    fmax = source.max_frequency_hz
    ppw = vs_min / (fmax * h)
    if ppw < config.min_points_per_wavelength:
        raise NumericalError(
            f"grid too coarse: {ppw:.1f} points per wavelength at {fmax:.1f} Hz "
            f"(vs_min={vs_min:.1f} m/s), need >= {config.min_points_per_wavelength}"
        )

    def node(x, what):
        idx = round(x / h)
        if abs(x - idx * h) > 1e-6:
            raise ValidationError(f"{what} at x={x} m is not on the {h} m grid")
        if not (0 <= x <= width):
            raise ValidationError(f"{what} at x={x} m is outside the model (width {width} m)")
        return idx

    npml = config.pml_thickness_cells
    jsurf = GHOST_ROWS
    rec_i = np.array([npml + node(x, "receiver") for x in geometry.receiver_x_m])
    src_i = npml + node(geometry.source_x_m, "source")

    lam, l2m, mu_xz, buoy_x, buoy_z, surf_modulus, rho_x, rho_z = \
        _staggered_materials(model, npml)
    nzt, nxt = lam.shape

    f_dom = source.dominant_frequency_hz
    a_xf, b_xf, a_xh, b_xh = _cpml_profiles(nxt, npml, h, config.dt_s, vp_max,
                                            f_dom, True, True)
    a_zf, b_zf, a_zh, b_zh = _cpml_profiles(nzt, npml, h, config.dt_s, vp_max,
                                            f_dom, False, True)

    force = make_source(source, config.dt_s, config.duration_s)
    stride = config.record_stride
    n_samples = round(config.duration_s * config.record_rate_hz)
    total_steps = n_samples * stride

    f32 = np.float32
    shape = (nzt, nxt)
    vx, vz, sxx, szz, sxz = (np.zeros(shape, f32) for _ in range(5))
    psis = [np.zeros(shape, f32) for _ in range(8)]
    (psi_sxx_x, psi_sxz_z, psi_sxz_x, psi_szz_z,
     psi_vx_x, psi_vz_z, psi_vz_x, psi_vx_z) = psis

    traces = np.zeros((len(rec_i), n_samples), f32)
    dth = f32(config.dt_s / h)
    src_scale = f32(config.dt_s * buoy_z[jsurf, src_i] / h**2)
    want_energy = energy_stride is not None and energy_stride > 0
    if want_energy:
        vx_prev = np.zeros(shape, f32)
        vz_prev = np.zeros(shape, f32)
        energy_steps, energy_vals = [], []

    for n in range(total_steps):
        if n % stride == 0:
            traces[:, n // stride] = vz[jsurf, rec_i]
        sample_energy = want_energy and n % energy_stride == 0
        if sample_energy:
            vx_prev[...] = vx
            vz_prev[...] = vz
        fdk.update_velocity(vx, vz, sxx, szz, sxz, buoy_x, buoy_z,
                            psi_sxx_x, psi_sxz_z, psi_sxz_x, psi_szz_z,
                            a_xh, b_xh, a_xf, b_xf, a_zf, b_zf, a_zh, b_zh,
                            dth, npml, jsurf)
        vz[jsurf, src_i] += src_scale * f32(force[n])
        if sample_energy:
            energy_steps.append(n)
            energy_vals.append(fdk.interior_energy(
                vx, vz, vx_prev, vz_prev, sxx, szz, sxz, lam, l2m, mu_xz,
                rho_x, rho_z, h, jsurf, npml, nz_phys, nx_phys))
        fdk.update_stress(vx, vz, sxx, szz, sxz, lam, l2m, mu_xz, surf_modulus,
                          psi_vx_x, psi_vz_z, psi_vz_x, psi_vx_z,
                          a_xh, b_xh, a_xf, b_xf, a_zf, b_zf, a_zh, b_zh,
                          dth, npml, jsurf)
        fdk.apply_surface_images(szz, sxz, jsurf)
        if n % 512 == 511 and not np.isfinite(vz[jsurf, ::8]).all():
            raise NumericalError(f"numerical instability: non-finite field at step {n}")

    if not np.isfinite(traces).all():
        raise NumericalError("numerical instability: non-finite samples in recorded traces")

    diagnostics = {
        "courant": courant,
        "points_per_wavelength": ppw,
        "source_duration_s": _source_active_duration(source),
    }
    if want_energy:
        diagnostics["energy_steps"] = np.array(energy_steps)
        diagnostics["energy"] = np.array(energy_vals)
    return ShotGather(traces, geometry, config.record_rate_hz, source, diagnostics)


def _source_active_duration(source: SourceFunction) -> float:
    if source.kind == "ricker":
        return 3.0 / source.params["center_hz"]
    if source.kind == "filtered_spike":
        return 6.0 / source.params["highcut_hz"]
    return source.params["sweep_s"]


def stack_shots(gathers: list) -> ShotGather:
    """Sample-wise mean of repeated shots with identical acquisition."""
    if not gathers:
        raise ValidationError("stack_shots needs at least one gather")
    first = gathers[0]
    for g in gathers[1:]:
        if g.geometry != first.geometry:
            raise ValidationError("stack_shots: gathers have different geometry")
        if g.rate_hz != first.rate_hz:
            raise ValidationError("stack_shots: gathers have different sampling rates")
        if g.traces.shape != first.traces.shape:
            raise DataError(
                f"stack_shots: trace shapes differ ({g.traces.shape} vs {first.traces.shape})"
            )
    stacked = np.mean([g.traces.astype(np.float64) for g in gathers], axis=0)
    return ShotGather(stacked.astype(np.float32), first.geometry, first.rate_hz, first.source)
