"""Cosine-transform diagonalization of the mirror-boundary Laplacian.

The five-point Laplacian of :mod:`reflsm.grid` has the DCT-II basis as its
eigenbasis, with eigenvalues ``(2-2cos(pi k/H)) + (2-2cos(pi l/W))`` for
``-laplacian``. Screened-Poisson systems ``(c - theta*Lap) u = rhs`` therefore
solve in closed form in the coefficient domain; the same machinery yields the
smoothing solve for the illumination layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as _fft

from .grid import GaussianKernel

# Screened systems with an effectively vanishing zero-order coefficient are
# regularized at the DC mode instead of failing; callers flag the event.
DC_GUARD = 1e-12


@dataclass(frozen=True)
class NeumannSpectrum:
    """Eigenvalues of the negative mirror-boundary Laplacian on an HxW grid."""

    height: int
    width: int
    eigenvalues: np.ndarray

    @classmethod
    def for_shape(cls, height: int, width: int) -> "NeumannSpectrum":
        if height < 2 or width < 2:
            raise ValueError("grid must be at least 2x2")
        row = 2.0 - 2.0 * np.cos(np.pi * np.arange(height) / height)
        col = 2.0 - 2.0 * np.cos(np.pi * np.arange(width) / width)
        return cls(height, width, row[:, None] + col[None, :])


def dct2_forward(f: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D type-II cosine transform."""
    return _fft.dctn(f, type=2, norm="ortho")


def dct2_inverse(coeffs: np.ndarray) -> np.ndarray:
    return _fft.idctn(coeffs, type=2, norm="ortho")


def kernel_symbol(kernel: GaussianKernel, n: int) -> np.ndarray:
    """Eigenvalues of 1-D mirror-padded convolution with `kernel` on n samples.

    Valid whenever the kernel radius is below n (single reflection); used only
    to build preconditioners, so a mismatch on tiny grids is harmless.
    """
    k = np.arange(n)
    sym = np.full(n, kernel.taps[kernel.radius])
    for m in range(1, kernel.radius + 1):
        sym += 2.0 * kernel.taps[kernel.radius + m] * np.cos(np.pi * k * m / n)
    return sym


def solve_helmholtz(
    rhs: np.ndarray, c: float, theta: float, spectrum: NeumannSpectrum
) -> np.ndarray:
    """Solve ``(c - theta*Lap) u = rhs`` under the mirror boundary convention.

    ``c`` below DC_GUARD is lifted to DC_GUARD, which regularizes the
    otherwise singular constant mode.
    """
    if c == 0.0 and theta == 0.0:
        raise ValueError("singular system: c and theta are both zero")
    if c < 0.0 or theta < 0.0:
        raise ValueError(f"coefficients must be nonnegative, got c={c} theta={theta}")
    if rhs.shape != (spectrum.height, spectrum.width):
        raise ValueError("rhs shape does not match spectrum")
    denom = max(c, DC_GUARD) + theta * spectrum.eigenvalues
    return dct2_inverse(dct2_forward(rhs) / denom)


def solve_bias(
    residual: np.ndarray, eps_w: float, alpha_b: float, spectrum: NeumannSpectrum
) -> np.ndarray:
    """Smoothed illumination estimate solving ``(eps_w - alpha_b*Lap) B = eps_w*residual``."""
    if eps_w <= 0.0:
        raise ValueError(f"eps_w must be positive, got {eps_w}")
    if alpha_b < 0.0:
        raise ValueError(f"alpha_b must be nonnegative, got {alpha_b}")
    if alpha_b == 0.0:
        # no smoothing: the system is diagonal and the solution is the residual
        return residual.copy()
    return solve_helmholtz(eps_w * residual, eps_w, alpha_b, spectrum)
