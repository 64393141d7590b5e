"""Stochastic two-layer (soil over undulating bedrock) 2D velocity models.

Each model is drawn from an independent counter-based RNG stream keyed on
(seed, index), so generation is deterministic and order-independent: model
k is bit-identical whether generated alone, in a batch, or in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import ValidationError

GRAVITY_MPS2 = 9.81
ATM_PA = 101325.0
LATERAL_PRESSURE_COEFF = 0.5  # at-rest K0 for the mean-stress profile

SOIL_POISSON = 0.33
ROCK_POISSON = 0.20
SOIL_RHO = 2000.0
ROCK_RHO = 2100.0
SOIL_VS_FLOOR = 200.0

INTERFACE_CLASSES = ("highly", "slightly", "linear")


def vp_vs_ratio(poisson: float) -> float:
    """Elastic vp/vs for a given Poisson's ratio."""
    return math.sqrt(2.0 * (1.0 - poisson) / (1.0 - 2.0 * poisson))


SOIL_VPVS = vp_vs_ratio(SOIL_POISSON)
ROCK_VPVS = vp_vs_ratio(ROCK_POISSON)


@dataclass(frozen=True)
class ModelSpec:
    """Statistical recipe for one family of soil-over-bedrock models.

    Intervals are (low, high) in SI units. ``class_mix`` gives the target
    fractions of (highly, slightly, linear) interface classes and must sum
    to 1 with fractions representable over a common small block size.
    """

    width_m: float = 104.0
    depth_m: float = 24.0
    pixel_m: float = 1.0
    soil_factor_range: tuple[float, float] = (0.9, 1.1)
    interface_depth_range_m: tuple[float, float] = (5.0, 20.0)
    bedrock_vs_range_mps: tuple[float, float] = (360.0, 760.0)
    class_mix: tuple[float, float, float] = (0.30, 0.60, 0.10)
    undulation_bands: dict = field(
        default_factory=lambda: {
            "highly": (1.0 / 60.0, 1.0 / 5.0),
            "slightly": (1.0 / 60.0, 1.0 / 10.0),
        }
    )
    undulation_ptp_m: dict = field(
        default_factory=lambda: {"highly": (1.0, 4.0), "slightly": (0.5, 2.0)}
    )
    perturb_corr_v_m: tuple[float, float] = (1.0, 2.0)
    perturb_corr_h_m: tuple[float, float] = (4.0, 6.0)
    perturb_cov: float = 0.05
    soil_vs_coeff_mps: float = 240.0
    seed: int = 0

    def validate(self) -> None:
        for name in (
            "soil_factor_range",
            "interface_depth_range_m",
            "bedrock_vs_range_mps",
            "perturb_corr_v_m",
            "perturb_corr_h_m",
        ):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi):
                raise ValidationError(f"{name} must be a nonnegative interval, got {(lo, hi)}")
        for name in ("width_m", "depth_m", "pixel_m"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for cls in ("highly", "slightly"):
            lo, hi = self.undulation_bands[cls]
            if not (0.0 < lo <= hi):
                raise ValidationError(f"undulation_bands[{cls!r}] must be a positive interval")
            lo, hi = self.undulation_ptp_m[cls]
            if not (0.0 <= lo <= hi):
                raise ValidationError(f"undulation_ptp_m[{cls!r}] must be a nonnegative interval")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValidationError(f"class_mix must sum to 1, got {self.class_mix}")
        if self.perturb_cov < 0:
            raise ValidationError("perturb_cov must be nonnegative")
        for name in ("width_m", "depth_m"):
            ratio = getattr(self, name) / self.pixel_m
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValidationError(f"pixel_m must divide {name} evenly")
        if self.interface_depth_range_m[1] > self.depth_m:
            raise ValidationError("interface_depth_range_m exceeds depth_m")
        self.class_block()  # raises if mix is not representable

    @property
    def n_cols(self) -> int:
        return round(self.width_m / self.pixel_m)

    @property
    def n_rows(self) -> int:
        return round(self.depth_m / self.pixel_m)

    def class_block(self) -> list[str]:
        """Deterministic per-block class assignment realizing class_mix exactly.

        Returns a list of length B (the smallest block over which the mix is
        exact); model ``index`` gets class ``block[index % B]``.
        """
        fracs = [Fraction(m).limit_denominator(1000) for m in self.class_mix]
        B = 1
        for f in fracs:
            B = B * f.denominator // math.gcd(B, f.denominator)
        counts = [int(f * B) for f in fracs]
        if sum(counts) != B:
            raise ValidationError(f"class_mix {self.class_mix} is not exactly representable")
        block = []
        for cls, n in zip(INTERFACE_CLASSES, counts):
            block.extend([cls] * n)
        return block


@dataclass(frozen=True)
class CropWindow:
    """Lateral window (meters) and depth retained by :func:`crop`."""

    x_start_m: float
    x_end_m: float
    depth_m: float


@dataclass
class VelocityModel:
    """Gridded 2D elastic model; row 0 is the surface, columns run left to right.

    Grids are cell-based: entry [j, i] is the value of the 1-pixel cell whose
    center sits at depth (j + 0.5) * pixel_m and x (i + 0.5) * pixel_m.
    """

    vs: np.ndarray
    vp: np.ndarray
    rho: np.ndarray
    interface_depth: np.ndarray  # per-column depth of the soil/rock contact (m)
    interface_class: str
    pixel_m: float
    seed: int
    index: int

    @property
    def width_m(self) -> float:
        return self.vs.shape[1] * self.pixel_m

    @property
    def depth_m(self) -> float:
        return self.vs.shape[0] * self.pixel_m

    def rock_mask(self) -> np.ndarray:
        """Boolean grid, True where a cell center lies below the interface."""
        z = (np.arange(self.vs.shape[0]) + 0.5) * self.pixel_m
        return z[:, None] > self.interface_depth[None, :]


def interface_components(spec: ModelSpec, index: int):
    """Draw the interface description for model ``index``.

    Returns (class, mean_depth, freqs, amps, phases); the interface is
    mean_depth + sum_k amps[k] * sin(2*pi*freqs[k]*x + phases[k]). Linear
    interfaces have empty component arrays. Uses the same RNG stream prefix
    as :func:`generate_model`, whose remaining draws follow these.
    """
    rng = _model_rng(spec.seed, index)
    cls = spec.class_block()[index % len(spec.class_block())]
    # Draw order is part of the file-format-level contract: changing it
    # changes every generated model.
    _soil_factor = rng.uniform(*spec.soil_factor_range)
    _bedrock_vs = rng.uniform(*spec.bedrock_vs_range_mps)
    mean_depth = rng.uniform(*spec.interface_depth_range_m)
    if cls == "linear":
        return cls, mean_depth, np.zeros(0), np.zeros(0), np.zeros(0)
    freqs = rng.uniform(*spec.undulation_bands[cls], size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    weights = rng.uniform(0.1, 1.0, size=3)
    ptp = rng.uniform(*spec.undulation_ptp_m[cls])
    amps = weights / weights.sum() * (ptp / 2.0)
    return cls, mean_depth, freqs, amps, phases


def _model_rng(seed: int, index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _soil_vs_profile(spec: ModelSpec, z: np.ndarray, factor: float) -> np.ndarray:
    """Power-law soil stiffness profile, floored at SOIL_VS_FLOOR."""
    sigma_m = (1.0 + 2.0 * LATERAL_PRESSURE_COEFF) / 3.0 * SOIL_RHO * GRAVITY_MPS2 * z
    vs = factor * spec.soil_vs_coeff_mps * (sigma_m / ATM_PA) ** 0.25
    return np.maximum(vs, SOIL_VS_FLOOR)


def gaussian_random_field(rng, n_rows, n_cols, pixel_m, corr_v_m, corr_h_m):
    """Unit-variance Gaussian field with separable Gaussian autocorrelation.

    Spectral synthesis on the torus: white noise is filtered so the field's
    covariance equals exp(-(dx/corr_h)^2 - (dz/corr_v)^2). Valid while the
    correlation lengths are much shorter than the domain.
    """
    iz = np.arange(n_rows)
    ix = np.arange(n_cols)
    dz = np.minimum(iz, n_rows - iz) * pixel_m
    dx = np.minimum(ix, n_cols - ix) * pixel_m
    cov = np.exp(-((dz / corr_v_m) ** 2))[:, None] * np.exp(-((dx / corr_h_m) ** 2))[None, :]
    spectrum = np.fft.fft2(cov).real
    np.clip(spectrum, 0.0, None, out=spectrum)
    white = rng.standard_normal((n_rows, n_cols))
    fld = np.fft.ifft2(np.sqrt(spectrum) * np.fft.fft2(white)).real
    return fld


def generate_model(spec: ModelSpec, index: int) -> VelocityModel:
    """Generate model ``index`` of the family described by ``spec``."""
    spec.validate()
    if index < 0:
        raise ValidationError(f"index must be nonnegative, got {index}")
    rng = _model_rng(spec.seed, index)
    block = spec.class_block()
    cls = block[index % len(block)]

    soil_factor = rng.uniform(*spec.soil_factor_range)
    bedrock_vs = rng.uniform(*spec.bedrock_vs_range_mps)
    mean_depth = rng.uniform(*spec.interface_depth_range_m)
    if cls == "linear":
        interface = np.full(spec.n_cols, mean_depth)
    else:
        freqs = rng.uniform(*spec.undulation_bands[cls], size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        weights = rng.uniform(0.1, 1.0, size=3)
        ptp = rng.uniform(*spec.undulation_ptp_m[cls])
        amps = weights / weights.sum() * (ptp / 2.0)
        x = (np.arange(spec.n_cols) + 0.5) * spec.pixel_m
        interface = mean_depth + np.sum(
            amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * x[None, :] + phases[:, None]),
            axis=0,
        )
    corr_v = rng.uniform(*spec.perturb_corr_v_m)
    corr_h = rng.uniform(*spec.perturb_corr_h_m)
    perturb = gaussian_random_field(rng, spec.n_rows, spec.n_cols, spec.pixel_m, corr_v, corr_h)

    z = (np.arange(spec.n_rows) + 0.5) * spec.pixel_m
    soil_vs = _soil_vs_profile(spec, z, soil_factor)
    vs = np.repeat(soil_vs[:, None], spec.n_cols, axis=1)
    rock = z[:, None] > interface[None, :]
    vs[rock] = bedrock_vs
    vs *= 1.0 + spec.perturb_cov * perturb
    # Re-floor the soil so the 200 m/s guarantee survives the perturbation.
    vs[~rock] = np.maximum(vs[~rock], SOIL_VS_FLOOR)

    vp = np.where(rock, ROCK_VPVS, SOIL_VPVS) * vs
    rho = np.where(rock, ROCK_RHO, SOIL_RHO)
    return VelocityModel(
        vs=vs,
        vp=vp,
        rho=rho.astype(float),
        interface_depth=interface,
        interface_class=cls,
        pixel_m=spec.pixel_m,
        seed=spec.seed,
        index=index,
    )


def crop(model: VelocityModel, window: CropWindow) -> VelocityModel:
    """Cut the sub-model inside ``window``; metadata is preserved."""
    px = model.pixel_m
    for name, value in (("x_start_m", window.x_start_m), ("x_end_m", window.x_end_m),
                        ("depth_m", window.depth_m)):
        if abs(value / px - round(value / px)) > 1e-9:
            raise ValidationError(f"crop {name}={value} is not a pixel multiple of {px}")
    c0 = round(window.x_start_m / px)
    c1 = round(window.x_end_m / px)
    r1 = round(window.depth_m / px)
    n_rows, n_cols = model.vs.shape
    if not (0 <= c0 < c1 <= n_cols and 0 < r1 <= n_rows):
        raise ValidationError(
            f"crop window [{window.x_start_m}, {window.x_end_m}] x {window.depth_m} m "
            f"outside model domain {model.width_m} x {model.depth_m} m"
        )
    return VelocityModel(
        vs=model.vs[:r1, c0:c1].copy(),
        vp=model.vp[:r1, c0:c1].copy(),
        rho=model.rho[:r1, c0:c1].copy(),
        interface_depth=model.interface_depth[c0:c1].copy(),
        interface_class=model.interface_class,
        pixel_m=model.pixel_m,
        seed=model.seed,
        index=model.index,
    )


def refine(model: VelocityModel, target_pixel_m: float) -> VelocityModel:
    """Bilinear resample of all fields onto a commensurate pixel size."""
    ratio = model.pixel_m / target_pixel_m
    inv = target_pixel_m / model.pixel_m
    if abs(ratio - round(ratio)) > 1e-9 and abs(inv - round(inv)) > 1e-9:
        raise ValidationError(
            f"target pixel {target_pixel_m} m is not commensurate with {model.pixel_m} m"
        )
    n_rows, n_cols = model.vs.shape
    src_z = (np.arange(n_rows) + 0.5) * model.pixel_m
    src_x = (np.arange(n_cols) + 0.5) * model.pixel_m
    out_rows = round(model.depth_m / target_pixel_m)
    out_cols = round(model.width_m / target_pixel_m)
    dst_z = (np.arange(out_rows) + 0.5) * target_pixel_m
    dst_x = (np.arange(out_cols) + 0.5) * target_pixel_m

    def interp2(grid):
        # Separable bilinear: rows first, then columns; np.interp clamps at
        # the outermost cell centers, so no overshoot is possible.
        tmp = np.empty((n_rows, out_cols))
        for j in range(n_rows):
            tmp[j] = np.interp(dst_x, src_x, grid[j])
        out = np.empty((out_rows, out_cols))
        for i in range(out_cols):
            out[:, i] = np.interp(dst_z, src_z, tmp[:, i])
        return out

    return VelocityModel(
        vs=interp2(model.vs),
        vp=interp2(model.vp),
        rho=interp2(model.rho),
        interface_depth=np.interp(dst_x, src_x, model.interface_depth),
        interface_class=model.interface_class,
        pixel_m=target_pixel_m,
        seed=model.seed,
        index=model.index,
    )


def with_spec_overrides(spec: ModelSpec, **kwargs) -> ModelSpec:
    """Convenience for tests and configs: functional update of a spec."""
    return replace(spec, **kwargs)
