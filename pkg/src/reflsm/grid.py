"""Raster fields and the discrete operator algebra used by every solver step.

Fields are plain 2-D float64 arrays indexed ``[row, col]``. All operators use
the same mirror (Neumann) boundary convention: forward differences for the
gradient, backward differences with boundary truncation for the divergence,
so that ``<grad f, v> == -<f, div v>`` holds exactly and the five-point
Laplacian is diagonalized by the type-II cosine transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage


class VectorField2(NamedTuple):
    """Pair of same-shape scalar fields holding the x and y components."""

    x: np.ndarray
    y: np.ndarray


def validate_field(f, name: str = "field") -> np.ndarray:
    """Coerce to a 2-D float64 array and enforce the field invariants."""
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"{name} must be at least 2x2, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def validate_vector_field(v: VectorField2, name: str = "vector field") -> VectorField2:
    x = validate_field(v.x, f"{name}.x")
    y = validate_field(v.y, f"{name}.y")
    if x.shape != y.shape:
        raise ValueError(f"{name} components differ in shape: {x.shape} vs {y.shape}")
    return VectorField2(x, y)


@dataclass(frozen=True)
class GaussianKernel:
    """Normalized 1-D Gaussian taps used separably in both directions."""

    sigma: float
    radius: int
    taps: np.ndarray

    @classmethod
    def from_sigma(cls, sigma: float) -> "GaussianKernel":
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        radius = int(np.ceil(3.0 * sigma))
        x = np.arange(-radius, radius + 1, dtype=np.float64)
        taps = np.exp(-(x * x) / (2.0 * sigma * sigma))
        taps /= taps.sum()
        return cls(sigma=float(sigma), radius=radius, taps=taps)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.shape != (2 * self.radius + 1,):
            raise ValueError("taps length must be 2*radius+1")
        if abs(taps.sum() - 1.0) > 1e-12:
            raise ValueError("taps must sum to 1")
        if not np.allclose(taps, taps[::-1], rtol=0, atol=0):
            raise ValueError("taps must be symmetric about the center")
        object.__setattr__(self, "taps", taps)


def gradient(f: np.ndarray) -> VectorField2:
    """Forward-difference gradient; last column/row of each component is 0."""
    gx = np.empty_like(f)
    gx[:, :-1] = f[:, 1:] - f[:, :-1]
    gx[:, -1] = 0.0
    gy = np.empty_like(f)
    gy[:-1, :] = f[1:, :] - f[:-1, :]
    gy[-1, :] = 0.0
    return VectorField2(gx, gy)


def divergence(v: VectorField2) -> np.ndarray:
    """Backward-difference divergence, the exact negative adjoint of gradient."""
    vx, vy = v
    if vx.shape != vy.shape:
        raise ValueError("vector field components must share dimensions")
    dx = np.empty_like(vx)
    dx[:, 0] = vx[:, 0]
    dx[:, 1:-1] = vx[:, 1:-1] - vx[:, :-2]
    dx[:, -1] = -vx[:, -2]
    dy = np.empty_like(vy)
    dy[0, :] = vy[0, :]
    dy[1:-1, :] = vy[1:-1, :] - vy[:-2, :]
    dy[-1, :] = -vy[-2, :]
    dx += dy
    return dx


def laplacian(f: np.ndarray) -> np.ndarray:
    """Five-point mirror-boundary Laplacian, computed as div(grad(f))."""
    return divergence(gradient(f))


def gaussian_convolve(f: np.ndarray, kernel: GaussianKernel) -> np.ndarray:
    """Separable Gaussian blur with mirror padding (horizontal, then vertical).

    The edge-repeating half-sample mirror extension keeps the operator
    self-adjoint and diagonal in the cosine basis; normalized taps preserve
    constants exactly.
    """
    tmp = ndimage.correlate1d(f, kernel.taps, axis=1, mode="reflect")
    return ndimage.correlate1d(tmp, kernel.taps, axis=0, mode="reflect")


def clip_field(f: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Per-pixel projection onto [lo, hi]."""
    if lo > hi:
        raise ValueError(f"invalid clip range: lo={lo} > hi={hi}")
    return np.clip(f, lo, hi)
