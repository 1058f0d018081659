"""Ground-truth phantoms with controllable illumination shading and noise.

Every layer of a generated phantom is returned separately (clean, bias,
noisy composite, truth mask) so tests can check recovery against exact
references. Randomness comes from a PCG64 generator seeded explicitly; the
generator identity is recorded in emitted metadata so phantoms reproduce
elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

RNG_NAME = "pcg64"

# noisy outputs are clipped into [NOISE_FLOOR, 1] so downstream log
# transforms stay finite
NOISE_FLOOR = 1e-3

SHAPES = ("disk", "two-disks", "ring", "checker-blob")
BIAS_KINDS = ("none", "linear-ramp", "gaussian-bump", "low-freq-sinusoid")
NOISE_KINDS = ("none", "gaussian", "salt-pepper", "speckle")


@dataclass(frozen=True)
class BiasSpec:
    """Multiplicative shading field; amplitude a puts the field in [1-a, 1+a]."""

    kind: str = "none"
    amplitude: float = 0.25

    def __post_init__(self):
        if self.kind not in BIAS_KINDS:
            raise ValueError(f"unknown bias kind {self.kind!r}")
        if not 0.0 <= self.amplitude < 1.0:
            raise ValueError("bias amplitude must be in [0, 1) to keep the field positive")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise layer; density is the pixel fraction for salt-pepper and the
    variance for gaussian/speckle."""

    kind: str = "none"
    density: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.density <= 0.2:
            raise ValueError("noise density must be in [0, 0.2]")


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 336
    width: int = 336
    shape: str = "disk"
    fg_level: float = 0.8
    bg_level: float = 0.25
    bias: BiasSpec = field(default_factory=BiasSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 7

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError("phantom must be at least 2x2")
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        for name, level in (("fg_level", self.fg_level), ("bg_level", self.bg_level)):
            if not 0.0 < level <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {level}")
        if self.fg_level == self.bg_level:
            raise ValueError("fg_level and bg_level must differ")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        amp = self.bias.amplitude if self.bias.kind != "none" else 0.0
        top = max(self.fg_level, self.bg_level) * (1.0 + amp)
        bottom = min(self.fg_level, self.bg_level) * (1.0 - amp)
        # keeps the biased composite inside the noise model's (0, 1] domain
        if top > 1.0 + 1e-12:
            raise ValueError(f"levels and bias amplitude push intensities above 1 ({top:.4f})")
        if bottom < NOISE_FLOOR:
            raise ValueError(f"levels and bias amplitude push intensities below {NOISE_FLOOR}")


class PhantomSample(NamedTuple):
    image: np.ndarray       # noisy biased composite, strictly positive
    truth_mask: np.ndarray  # int8, +1 on the shape interior
    clean: np.ndarray       # piecewise-constant levels
    bias: np.ndarray        # multiplicative shading field


def shape_mask(shape: str, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    base = min(height, width)

    def disk(y0, x0, r):
        return (yy - y0) ** 2 + (xx - x0) ** 2 <= r * r

    if shape == "disk":
        return disk(cy, cx, base / 4.0)
    if shape == "two-disks":
        r = base / 6.0
        return disk(0.32 * (height - 1), 0.30 * (width - 1), r) | disk(
            0.68 * (height - 1), 0.70 * (width - 1), r
        )
    if shape == "ring":
        return disk(cy, cx, base / 3.5) & ~disk(cy, cx, base / 7.0)
    if shape == "checker-blob":
        r = base / 6.0
        return (
            disk(0.30 * (height - 1), 0.30 * (width - 1), r)
            | disk(0.70 * (height - 1), 0.70 * (width - 1), r)
            | disk(cy, cx, base / 5.0)
        )
    raise ValueError(f"unknown shape {shape!r}")


def bias_field(spec: BiasSpec, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    amp = spec.amplitude
    if spec.kind == "none":
        return np.ones((height, width))
    if spec.kind == "linear-ramp":
        return 1.0 + amp * (2.0 * xx / (width - 1) - 1.0)
    if spec.kind == "gaussian-bump":
        cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
        s = min(height, width) / 3.0
        r2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (1.0 - amp) + 2.0 * amp * np.exp(-r2 / (2.0 * s * s))
    if spec.kind == "low-freq-sinusoid":
        return 1.0 + amp * np.sin(2.0 * np.pi * xx / (width - 1)) * np.sin(
            2.0 * np.pi * yy / (height - 1)
        )
    raise ValueError(f"unknown bias kind {spec.kind!r}")


def apply_noise(f: np.ndarray, spec: NoiseSpec, seed: int) -> np.ndarray:
    """Contaminate an intensity field in [0, 1]; output clipped to [1e-3, 1].

    gaussian adds N(0, density) i.i.d.; salt-pepper rewrites a density
    fraction of pixels to 0 or 1 (half each); speckle multiplies by (1 + n)
    with n ~ N(0, density).
    """
    if spec.kind == "none" or spec.density == 0.0:
        return f.copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    if spec.kind == "gaussian":
        out = f + rng.normal(0.0, np.sqrt(spec.density), f.shape)
    elif spec.kind == "salt-pepper":
        selected = rng.random(f.shape) < spec.density
        salt = rng.random(f.shape) < 0.5
        out = f.copy()
        out[selected & salt] = 1.0
        out[selected & ~salt] = 0.0
    elif spec.kind == "speckle":
        out = f * (1.0 + rng.normal(0.0, np.sqrt(spec.density), f.shape))
    else:
        raise ValueError(f"unknown noise kind {spec.kind!r}")
    return np.clip(out, NOISE_FLOOR, 1.0)


def generate(spec: PhantomSpec) -> PhantomSample:
    """Compose clean levels, shading, and noise into a reproducible phantom."""
    mask = shape_mask(spec.shape, spec.height, spec.width)
    clean = np.where(mask, spec.fg_level, spec.bg_level).astype(np.float64)
    bias = bias_field(spec.bias, spec.height, spec.width)
    image = apply_noise(clean * bias, spec.noise, spec.seed)
    truth = np.where(mask, 1, -1).astype(np.int8)
    return PhantomSample(image=image, truth_mask=truth, clean=clean, bias=bias)
