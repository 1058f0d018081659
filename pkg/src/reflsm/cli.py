"""Batch command-line front end.

Subcommands: ``segment``, ``correct``, ``synth``, ``eval``, ``sweep``. Every
solver weight and phantom knob is settable by flag or by a flat ``key=value``
config file (flags win). ``--print-config`` writes the fully resolved
configuration to stdout in the same format and exits, so a captured dump
reproduces the run bit for bit.

Exit codes: 0 success, 2 input/configuration error, 3 solver finished
without converging (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from .metrics import UndefinedMetricError, confusion, dice, precision, rtg_ratio
from .pgmio import (
    PgmParseError,
    compute_metrics,
    intensity_to_raster,
    mask_to_raster,
    raster_to_mask,
    read_pgm_file,
    to_log_domain,
    write_pgm_file,
    write_report,
)
from .solver import SolverParams, run
from .synth import RNG_NAME, BiasSpec, NoiseSpec, PhantomSpec, generate

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NOT_CONVERGED = 3

SEED_ENV_VAR = "REFLSM_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat run configuration; field names map to kebab-case keys/flags."""

    # solver weights
    lambda_i: float = 1.0
    alpha_b: float = 15.0
    beta: float = 0.02
    theta: float = 0.1
    tau: float = 0.5
    rho1: float = 1.0
    sigma: float = 3.0
    alpha_mag: float = 0.1
    eps_div: float = 1e-8
    eps_norm: float = 1e-6
    eps_w: float = None
    k_max: int = 30
    delta_tol: float = 1e-4
    v_pre_from_smoothed: bool = False
    # paths
    input: str = None
    truth: str = None
    pred: str = None
    corrected: str = None
    out: str = "out"
    # phantom
    phantom_shape: str = "disk"
    phantom_height: int = 336
    phantom_width: int = 336
    fg_level: float = 0.8
    bg_level: float = 0.25
    bias_kind: str = "none"
    bias_amplitude: float = 0.25
    noise_kind: str = "none"
    noise_density: float = 0.0
    seed: int = 7
    # sweep
    sweep_tau: str = None
    sweep_noise_kind: str = None
    sweep_noise_density: str = None
    jobs: int = 1


_FIELDS = {f.name: f for f in fields(RunConfig)}
_BOOL_FIELDS = {"v_pre_from_smoothed"}
_INT_FIELDS = {"k_max", "phantom_height", "phantom_width", "seed", "jobs"}
_STR_FIELDS = {
    "input", "truth", "pred", "corrected", "out",
    "phantom_shape", "bias_kind", "noise_kind",
    "sweep_tau", "sweep_noise_kind", "sweep_noise_density",
}


def _key_to_field(key: str) -> str:
    return key.replace("-", "_")


def _parse_value(name: str, raw: str):
    if name in _BOOL_FIELDS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"invalid boolean for {name}: {raw!r}")
    if raw.lower() in ("none", ""):
        return None
    try:
        if name in _INT_FIELDS:
            return int(raw)
        if name in _STR_FIELDS:
            return raw
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from exc


def load_config_file(path) -> dict:
    """Parse one ``key=value`` pair per line; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        name = _key_to_field(key.strip())
        if name not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key.strip()!r}")
        values[name] = _parse_value(name, raw.strip())
    return values


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if value is None:
            continue
        key = name.replace("_", "-")
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags; env seed wins over both."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        for name, value in load_config_file(args.config).items():
            setattr(cfg, name, value)
    for name in _FIELDS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            setattr(cfg, name, flag_value)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"invalid {SEED_ENV_VAR}: {env_seed!r}") from exc
    return cfg


def solver_params(cfg: RunConfig) -> SolverParams:
    return SolverParams(
        lambda_i=cfg.lambda_i,
        alpha_b=cfg.alpha_b,
        beta=cfg.beta,
        theta=cfg.theta,
        tau=cfg.tau,
        rho1=cfg.rho1,
        sigma=cfg.sigma,
        alpha_mag=cfg.alpha_mag,
        eps_div=cfg.eps_div,
        eps_norm=cfg.eps_norm,
        eps_w=cfg.eps_w,
        k_max=cfg.k_max,
        delta_tol=cfg.delta_tol,
        v_pre_from_smoothed=cfg.v_pre_from_smoothed,
    )


def phantom_spec(cfg: RunConfig, noise_kind=None, noise_density=None) -> PhantomSpec:
    return PhantomSpec(
        height=cfg.phantom_height,
        width=cfg.phantom_width,
        shape=cfg.phantom_shape,
        fg_level=cfg.fg_level,
        bg_level=cfg.bg_level,
        bias=BiasSpec(kind=cfg.bias_kind, amplitude=cfg.bias_amplitude),
        noise=NoiseSpec(
            kind=cfg.noise_kind if noise_kind is None else noise_kind,
            density=cfg.noise_density if noise_density is None else noise_density,
        ),
        seed=cfg.seed,
    )


def _load_input_log(cfg: RunConfig) -> np.ndarray:
    if not cfg.input:
        raise ConfigError("--input is required")
    return to_log_domain(read_pgm_file(cfg.input))


def _load_truth(cfg: RunConfig):
    if not cfg.truth:
        return None
    return raster_to_mask(read_pgm_file(cfg.truth))


def _print_metrics(metrics: dict) -> None:
    for key in ("dice", "precision", "rtg_ratio", "iters", "seconds", "converged"):
        value = metrics[key]
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value) if value == value else "nan"
        print(f"{key}={value}")


def cmd_segment(cfg: RunConfig) -> int:
    image = _load_input_log(cfg)
    result = run(image, solver_params(cfg))
    metrics = write_report(result, cfg.out, image_name=cfg.input, truth_mask=_load_truth(cfg))
    _print_metrics(metrics)
    return EXIT_OK if result.report.converged else EXIT_NOT_CONVERGED


def cmd_correct(cfg: RunConfig) -> int:
    # same pipeline as segment; the headline outputs here are the corrected
    # image, its histogram against the original, and the sharpness ratio
    image = _load_input_log(cfg)
    result = run(image, solver_params(cfg))
    metrics = write_report(result, cfg.out, image_name=cfg.input, truth_mask=_load_truth(cfg))
    print(f"corrected={Path(cfg.out) / 'corrected.pgm'}")
    print(f"histogram={Path(cfg.out) / 'histogram.csv'}")
    _print_metrics(metrics)
    return EXIT_OK if result.report.converged else EXIT_NOT_CONVERGED


def cmd_synth(cfg: RunConfig) -> int:
    spec = phantom_spec(cfg)
    sample = generate(spec)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm_file(out / "image.pgm", intensity_to_raster(sample.image))
    write_pgm_file(out / "truth.pgm", mask_to_raster(sample.truth_mask))
    write_pgm_file(out / "clean.pgm", intensity_to_raster(sample.clean))
    bias = sample.bias
    span = float(bias.max() - bias.min())
    bias_scaled = (bias - bias.min()) / span if span > 0 else np.zeros_like(bias)
    write_pgm_file(out / "bias.pgm", intensity_to_raster(bias_scaled))
    meta = {
        "height": spec.height,
        "width": spec.width,
        "shape": spec.shape,
        "fg-level": repr(spec.fg_level),
        "bg-level": repr(spec.bg_level),
        "bias-kind": spec.bias.kind,
        "bias-amplitude": repr(spec.bias.amplitude),
        "noise-kind": spec.noise.kind,
        "noise-density": repr(spec.noise.density),
        "seed": spec.seed,
        "rng": RNG_NAME,
    }
    (out / "metadata.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    print(f"phantom={out / 'image.pgm'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.pred or not cfg.truth:
        raise ConfigError("eval requires --pred and --truth")
    pred = raster_to_mask(read_pgm_file(cfg.pred))
    truth = raster_to_mask(read_pgm_file(cfg.truth))
    counts = confusion(pred, truth)
    d = dice(counts)
    try:
        p = precision(counts)
    except UndefinedMetricError:
        p = float("nan")
    rtg = float("nan")
    if cfg.input and cfg.corrected:
        original = to_log_domain(read_pgm_file(cfg.input))
        corrected = to_log_domain(read_pgm_file(cfg.corrected))
        rtg = rtg_ratio(np.exp(corrected), np.exp(original))
    print(f"dice={d!r}")
    print(f"precision={p!r}")
    print(f"rtg_ratio={rtg!r}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "eval.csv"
    new_file = not csv_path.exists()
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(["pred", "truth", "dice", "precision", "rtg_ratio"])
        writer.writerow([cfg.pred, cfg.truth, repr(d), repr(p), repr(rtg)])
    return EXIT_OK


def _sweep_values(cfg: RunConfig):
    taus = (
        [float(v) for v in cfg.sweep_tau.split(",")] if cfg.sweep_tau else [cfg.tau]
    )
    kinds = (
        [v.strip() for v in cfg.sweep_noise_kind.split(",")]
        if cfg.sweep_noise_kind
        else [cfg.noise_kind]
    )
    densities = (
        [float(v) for v in cfg.sweep_noise_density.split(",")]
        if cfg.sweep_noise_density
        else [cfg.noise_density]
    )
    return list(product(taus, kinds, densities))


def _sweep_cell(cfg: RunConfig, tau: float, kind: str, density: float) -> list:
    params = replace(solver_params(cfg), tau=tau)
    if cfg.input:
        image = _load_input_log(cfg)
        truth = _load_truth(cfg)
    else:
        sample = generate(phantom_spec(cfg, noise_kind=kind, noise_density=density))
        image = to_log_domain(intensity_to_raster(sample.image))
        truth = sample.truth_mask
    result = run(image, params)
    metrics = compute_metrics(result, truth)
    return [
        repr(tau), kind, repr(density),
        repr(metrics["dice"]), repr(metrics["precision"]), repr(metrics["rtg_ratio"]),
        metrics["iters"], str(metrics["converged"]).lower(),
    ]


def cmd_sweep(cfg: RunConfig) -> int:
    cells = _sweep_values(cfg)
    jobs = max(1, cfg.jobs)
    if jobs == 1:
        rows = [_sweep_cell(cfg, *cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_cell, cfg, *cell) for cell in cells]
            rows = [f.result() for f in futures]  # original cell order
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["tau", "noise_kind", "noise_density", "dice", "precision", "rtg_ratio",
             "iterations", "converged"]
        )
        writer.writerows(rows)
    print(f"sweep={out / 'sweep.csv'} cells={len(rows)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reflsm",
        description="Reflectance-based segmentation and bias-field correction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("segment", "segment a PGM image and write mask/report files"),
        ("correct", "bias-correct a PGM image; headline outputs are corrected image and histogram"),
        ("synth", "generate a ground-truth phantom"),
        ("eval", "score predicted vs truth masks (and optionally corrected images)"),
        ("sweep", "cross-product sweep over tau and noise settings"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--print-config", action="store_true",
                       help="print the resolved config and exit")
        for field_name in _FIELDS:
            flag = "--" + field_name.replace("_", "-")
            if field_name in _BOOL_FIELDS:
                p.add_argument(flag, dest=field_name, default=None,
                               type=lambda v: _parse_value("v_pre_from_smoothed", v),
                               metavar="BOOL")
            elif field_name in _INT_FIELDS:
                p.add_argument(flag, dest=field_name, default=None, type=int)
            elif field_name in _STR_FIELDS:
                p.add_argument(flag, dest=field_name, default=None)
            else:
                p.add_argument(flag, dest=field_name, default=None, type=float)
    return parser


COMMANDS = {
    "segment": cmd_segment,
    "correct": cmd_correct,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except (ConfigError, PgmParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
