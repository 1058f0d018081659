"""Binary PGM input/output, log-domain conversion, and result reports.

Readers tolerate arbitrary header whitespace and ``#`` comments and fail
with a byte offset on malformed input; writers emit one canonical form
(single spaces, newline after maxval) so write-then-read round-trips are
byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import validate_field
from .metrics import UndefinedMetricError, confusion, dice, precision, rtg_ratio
from .solver import SegmentationResult

# Intensities are mapped affinely onto [INTENSITY_FLOOR, 1] before the log.
# The floor bounds the darkest representable log value at log(0.2) ~ -1.6,
# which keeps impulse outliers commensurate with tissue contrast in the log
# domain (a deep floor makes their tails dominate the region statistics) and
# keeps the sharpness metric's per-pixel division well conditioned.
INTENSITY_FLOOR = 0.2

MAX_HEADER_BYTES = 65536


class PgmParseError(ValueError):
    """Malformed PGM input; carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class RasterImage:
    """Grayscale raster with samples in [0, maxval]."""

    height: int
    width: int
    maxval: int
    pixels: np.ndarray  # uint16, shape (height, width)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("raster dimensions must be positive")
        if self.maxval not in (255, 65535):
            raise ValueError(f"maxval must be 255 or 65535, got {self.maxval}")
        px = np.asarray(self.pixels, dtype=np.uint16)
        if px.shape != (self.height, self.width):
            raise ValueError("pixel array shape does not match dimensions")
        if px.max(initial=0) > self.maxval:
            raise ValueError("pixel value exceeds maxval")
        object.__setattr__(self, "pixels", px)


def _is_space(byte: int) -> bool:
    return byte in b" \t\n\r\x0b\x0c"


def read_pgm(data: bytes) -> RasterImage:
    """Parse a binary (P5) PGM byte stream."""
    if data[:2] != b"P5":
        raise PgmParseError("expected magic 'P5'", 0)
    pos = 2
    tokens = []
    # header: three whitespace-delimited integers, '#' comments run to newline
    while len(tokens) < 3:
        while pos < len(data) and _is_space(data[pos]):
            pos += 1
        if pos >= len(data):
            raise PgmParseError("truncated header", pos)
        if pos > MAX_HEADER_BYTES:
            raise PgmParseError("header too long", pos)
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not _is_space(data[pos]) and data[pos : pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise PgmParseError(f"expected integer header token, got {token[:20]!r}", start)
        tokens.append((int(token), start))
    (width, wpos), (height, hpos), (maxval, mpos) = tokens
    if width < 1:
        raise PgmParseError("width must be positive", wpos)
    if height < 1:
        raise PgmParseError("height must be positive", hpos)
    if not 0 < maxval < 65536:
        raise PgmParseError(f"maxval out of range: {maxval}", mpos)
    if pos >= len(data) or not _is_space(data[pos]):
        raise PgmParseError("expected single whitespace after maxval", pos)
    pos += 1
    bytes_per_sample = 1 if maxval < 256 else 2
    need = width * height * bytes_per_sample
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise PgmParseError(
            f"truncated payload: expected {need} bytes, found {len(payload)}", pos + len(payload)
        )
    if bytes_per_sample == 1:
        px = np.frombuffer(payload, dtype=np.uint8).astype(np.uint16)
    else:
        px = np.frombuffer(payload, dtype=">u2").astype(np.uint16)
    if px.max(initial=0) > maxval:
        bad = int(np.argmax(px > maxval))
        raise PgmParseError(
            f"pixel value {int(px[bad])} exceeds maxval {maxval}",
            pos + bad * bytes_per_sample,
        )
    canonical_maxval = 255 if maxval < 256 else 65535
    if maxval != canonical_maxval:
        # rescale non-canonical depths so maxval is always 255 or 65535
        px = np.floor(px.astype(np.float64) * canonical_maxval / maxval + 0.5).astype(np.uint16)
    return RasterImage(height, width, canonical_maxval, px.reshape(height, width))


def write_pgm(img: RasterImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n{img.maxval}\n".encode("ascii")
    if img.maxval < 256:
        payload = img.pixels.astype(np.uint8).tobytes()
    else:
        payload = img.pixels.astype(">u2").tobytes()
    return header + payload


def read_pgm_file(path) -> RasterImage:
    return read_pgm(Path(path).read_bytes())


def write_pgm_file(path, img: RasterImage) -> None:
    Path(path).write_bytes(write_pgm(img))


def _round_half_away(values: np.ndarray) -> np.ndarray:
    # np.round ties to even; raster quantization rounds half away from zero
    return np.floor(values + 0.5)


def to_log_domain(img: RasterImage) -> np.ndarray:
    """Map samples onto [INTENSITY_FLOOR, 1] and take the natural log."""
    v = img.pixels.astype(np.float64) / img.maxval
    return np.log(INTENSITY_FLOOR + (1.0 - INTENSITY_FLOOR) * v)


def from_log_domain(f: np.ndarray, maxval: int = 255) -> RasterImage:
    """Exponentiate and stretch onto the full raster range.

    The affine stretch is monotone, so pixel ordering survives; a constant
    field maps to all zeros.
    """
    f = validate_field(f, "field")
    e = np.exp(f)
    lo, hi = float(e.min()), float(e.max())
    if hi - lo <= 0.0:
        px = np.zeros_like(e)
    else:
        px = _round_half_away((e - lo) / (hi - lo) * maxval)
    return RasterImage(f.shape[0], f.shape[1], maxval, np.clip(px, 0, maxval).astype(np.uint16))


def intensity_to_raster(values: np.ndarray, maxval: int = 255) -> RasterImage:
    """Quantize intensities already scaled to [0, 1]."""
    values = validate_field(values, "values")
    px = _round_half_away(np.clip(values, 0.0, 1.0) * maxval)
    return RasterImage(values.shape[0], values.shape[1], maxval, px.astype(np.uint16))


def mask_to_raster(mask: np.ndarray, maxval: int = 255) -> RasterImage:
    px = np.where(np.asarray(mask) == 1, maxval, 0).astype(np.uint16)
    return RasterImage(mask.shape[0], mask.shape[1], maxval, px)


def raster_to_mask(img: RasterImage) -> np.ndarray:
    return np.where(img.pixels.astype(np.int64) * 2 > img.maxval, 1, -1).astype(np.int8)


METRICS_HEADER = ["image", "dice", "precision", "rtg_ratio", "iters", "seconds", "converged"]


def compute_metrics(result: SegmentationResult, truth_mask=None) -> dict:
    """Dice/precision against an optional truth mask plus the sharpness ratio."""
    original = np.exp(result.input_image)
    try:
        rtg = rtg_ratio(result.corrected_image, original)
    except (UndefinedMetricError, ValueError):
        rtg = float("nan")
    if truth_mask is not None:
        counts = confusion(result.mask, truth_mask)
        d = dice(counts)
        try:
            p = precision(counts)
        except UndefinedMetricError:
            p = float("nan")
    else:
        d = float("nan")
        p = float("nan")
    return {
        "dice": d,
        "precision": p,
        "rtg_ratio": rtg,
        "iters": result.report.iterations,
        "seconds": result.report.wall_seconds,
        "converged": result.report.converged,
    }


def write_report(
    result: SegmentationResult,
    out_dir,
    image_name: str = "image",
    truth_mask=None,
) -> dict:
    """Emit mask/corrected/decomposition rasters, a metrics CSV, and the
    256-bin original-vs-corrected intensity histogram. Returns the metrics row."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm_file(out / "mask.pgm", mask_to_raster(result.mask))
    write_pgm_file(out / "corrected.pgm", intensity_to_raster(result.corrected_image))
    write_pgm_file(out / "reflectance.pgm", from_log_domain(result.s_field))
    write_pgm_file(out / "bias.pgm", from_log_domain(result.b_field))

    metrics = compute_metrics(result, truth_mask)
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerow(
            [
                image_name,
                repr(metrics["dice"]),
                repr(metrics["precision"]),
                repr(metrics["rtg_ratio"]),
                metrics["iters"],
                f"{metrics['seconds']:.3f}",
                str(metrics["converged"]).lower(),
            ]
        )

    original = np.exp(result.input_image)
    orig_hist, _ = np.histogram(original, bins=256, range=(0.0, 1.0))
    corr_hist, _ = np.histogram(result.corrected_image, bins=256, range=(0.0, 1.0))
    with open(out / "histogram.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "original", "corrected"])
        for i in range(256):
            writer.writerow([i, int(orig_hist[i]), int(corr_hist[i])])
    return metrics
