"""Segmentation overlap metrics and the gradient-sharpness score.

Masks use +1 for foreground and -1 for background. The sharpness score
(tenengrad) runs in the intensity domain because it divides by the local
intensity; its ratio form benchmarks a corrected image against the original,
with values above 1 meaning the correction sharpened the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import validate_field


class UndefinedMetricError(ValueError):
    """Raised when a metric's denominator is empty or zero."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _validate_mask(mask, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.abs(arr) == 1):
        raise ValueError(f"{name} values must be -1 or +1")
    return arr


def confusion(pred, truth) -> ConfusionCounts:
    """Per-pixel tally of the four agreement cases."""
    pred = _validate_mask(pred, "pred")
    truth = _validate_mask(truth, "truth")
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    pf = pred == 1
    tf = truth == 1
    return ConfusionCounts(
        tp=int(np.sum(pf & tf)),
        fp=int(np.sum(pf & ~tf)),
        fn=int(np.sum(~pf & tf)),
        tn=int(np.sum(~pf & ~tf)),
    )


def dice(counts: ConfusionCounts) -> float:
    """Overlap score 2*TP / (2*TP + FP + FN); two empty masks score 1.0."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2.0 * counts.tp / denom


def precision(counts: ConfusionCounts) -> float:
    """Purity of positive predictions TP / (TP + FP)."""
    denom = counts.tp + counts.fp
    if denom == 0:
        raise UndefinedMetricError("precision undefined: no positive predictions")
    return counts.tp / denom


def tenengrad(image) -> float:
    """Mean intensity-normalized gradient magnitude (central differences).

    The image must be strictly positive; boundary differences use the mirror
    convention shared with the grid operators.
    """
    img = validate_field(image, "image")
    if np.any(img <= 0.0):
        raise ValueError("tenengrad requires strictly positive intensities")
    gx = np.zeros_like(img)
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    gx[:, 0] = (img[:, 1] - img[:, 0]) / 2.0
    gx[:, -1] = (img[:, -1] - img[:, -2]) / 2.0
    gy = np.zeros_like(img)
    gy[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2.0
    gy[0, :] = (img[1, :] - img[0, :]) / 2.0
    gy[-1, :] = (img[-1, :] - img[-2, :]) / 2.0
    return float(np.mean(np.sqrt(gx * gx + gy * gy) / img))


def rtg_ratio(corrected, original) -> float:
    """Sharpness of the corrected image relative to the original."""
    corrected = validate_field(corrected, "corrected")
    original = validate_field(original, "original")
    if corrected.shape != original.shape:
        raise ValueError("corrected and original must share dimensions")
    base = tenengrad(original)
    if base == 0.0:
        raise UndefinedMetricError("rtg_ratio undefined: original image is constant")
    return tenengrad(corrected) / base
