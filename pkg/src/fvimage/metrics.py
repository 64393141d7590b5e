"""Image-comparison metrics: pixelwise percent error and structural similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ValidationError


@dataclass(frozen=True)
class MetricConfig:
    """Structural-similarity settings (Wang et al. reference constants)."""

    dynamic_range: float
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def validate(self) -> None:
        if self.dynamic_range <= 0:
            raise ValidationError("dynamic_range must be positive")
        if self.window_size < 2 or self.window_size % 2 == 0:
            raise ValidationError("window_size must be an odd integer >= 3")
        if self.window_sigma <= 0:
            raise ValidationError("window_sigma must be positive")


def dispersion_metric_config() -> MetricConfig:
    """Config for comparing per-frequency-normalized dispersion images."""
    return MetricConfig(dynamic_range=1.0)


def vs_metric_config(true_images) -> MetricConfig:
    """Config for Vs images: range spans the true test-set extremes."""
    vmax = max(float(np.max(img)) for img in true_images)
    vmin = min(float(np.min(img)) for img in true_images)
    if vmax <= vmin:
        raise ValidationError("true test set has zero velocity range")
    return MetricConfig(dynamic_range=vmax - vmin)


def mape(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean absolute percent error over pixels, in physical units."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs true {true.shape}")
    if np.any(true <= 0):
        raise ValidationError("true image must be strictly positive for percent error")
    return float(np.mean(100.0 * np.abs(pred - true) / true))


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """2D Gaussian kernel normalized to unit sum."""
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_map(a: np.ndarray, b: np.ndarray, config: MetricConfig) -> np.ndarray:
    """Local SSIM at every fully-interior window position."""
    config.validate()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < config.window_size:
        raise ValidationError(
            f"image {a.shape} smaller than the {config.window_size}x{config.window_size} window"
        )
    win = gaussian_window(config.window_size, config.window_sigma)
    c1 = (config.k1 * config.dynamic_range) ** 2
    c2 = (config.k2 * config.dynamic_range) ** 2

    mu_a = fftconvolve(a, win, mode="valid")
    mu_b = fftconvolve(b, win, mode="valid")
    # E[x y] - E[x] E[y]; may be epsilon-negative from rounding, which the
    # stabilizing constants absorb.
    sig_aa = fftconvolve(a * a, win, mode="valid") - mu_a * mu_a
    sig_bb = fftconvolve(b * b, win, mode="valid") - mu_b * mu_b
    sig_ab = fftconvolve(a * b, win, mode="valid") - mu_a * mu_b
    return ((2.0 * mu_a * mu_b + c1) * (2.0 * sig_ab + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (sig_aa + sig_bb + c2)
    )


def mssim(a: np.ndarray, b: np.ndarray, config: MetricConfig) -> float:
    """Mean SSIM over all valid window positions."""
    return float(np.mean(ssim_map(a, b, config)))
