"""Histogram color matching: an affine RGB transform x' = Ax + b chosen so
the transformed pixels' mean and covariance equal a target image's.

A = Sigma_target^(1/2) Sigma_source^(-1/2), b = mu_target - A mu_source,
with matrix square roots taken through the symmetric eigendecomposition.
Eigenvalues are floored at 1e-8 before rooting/inverting, which keeps
near-singular covariances (grayscale images) usable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import ShapeError
from .wct import eig_sym

_EIG_FLOOR = 1e-8


@dataclass(frozen=True)
class ColorStats:
    """Per-image RGB mean (3,) and population covariance (3, 3)."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ColorTransform:
    """Affine pixel map x' = A x + b."""

    a: np.ndarray  # (3, 3)
    b: np.ndarray  # (3,)


def compute_stats(image: np.ndarray) -> ColorStats:
    """Mean and covariance of the RGB values, normalized by the pixel count."""
    image = tc.as_tensor(image)
    c, h, w = image.shape
    if c != 3:
        raise ShapeError(f"color statistics need a 3-channel image, got C={c}")
    if h * w < 2:
        raise ValueError("need at least 2 pixels to compute color statistics")
    px = image.reshape(3, h * w)
    mean = px.mean(axis=1)
    centered = px - mean[:, None]
    cov = (centered @ centered.T) / (h * w)
    return ColorStats(mean=mean, cov=cov)


def _spd_power(m: np.ndarray, power: float) -> np.ndarray:
    """M^power for symmetric PSD M, eigenvalues floored at 1e-8."""
    eig = eig_sym(m)
    d = np.maximum(eig.values, _EIG_FLOOR)
    e = eig.vectors
    return (e * d**power) @ e.T


def sqrt_spd(m: np.ndarray) -> np.ndarray:
    """Symmetric square root U diag(sqrt(d)) U^T with floored eigenvalues."""
    return _spd_power(np.asarray(m, dtype=np.float64), 0.5)


def fit_color_transform(
    content_stats: ColorStats, style_stats: ColorStats
) -> ColorTransform:
    """Affine map making the style image's color statistics match the content's.

    Fully degenerate (zero) content covariance collapses to the constant map
    A = 0, b = content mean.
    """
    sigma_c = np.asarray(content_stats.cov, dtype=np.float64)
    sigma_s = np.asarray(style_stats.cov, dtype=np.float64)
    if float(np.abs(sigma_c).max()) == 0.0:
        a = np.zeros((3, 3))
    else:
        a = sqrt_spd(sigma_c) @ _spd_power(sigma_s, -0.5)
    b = np.asarray(content_stats.mean) - a @ np.asarray(style_stats.mean)
    return ColorTransform(a=a, b=b)


def apply_color_transform(image: np.ndarray, transform: ColorTransform) -> np.ndarray:
    """Apply x' = Ax + b per pixel; output is left unclamped."""
    image = tc.as_tensor(image)
    if image.shape[0] != 3:
        raise ShapeError(f"expected a 3-channel image, got C={image.shape[0]}")
    c, h, w = image.shape
    px = image.reshape(3, h * w)
    out = transform.a @ px + transform.b[:, None]
    return out.reshape(3, h, w)


def match_colors(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Recolor ``source`` so its color statistics match ``target``'s."""
    t = fit_color_transform(compute_stats(target), compute_stats(source))
    return apply_color_transform(source, t)
