"""Alternating-direction driver for the reflectance segmentation model.

One outer iteration updates, in order: the soft region means (c1, c2), the
relaxed label field u (closed-form cosine-domain solve plus projection onto
[-1, 1]), the illumination layer B (smoothing solve), the reflectance S
(preconditioned conjugate gradients on a symmetric positive definite system),
the auxiliary gradient split d (vector shrinkage), and the scaled dual p.
The loop stops when the relative change of u drops below ``delta_tol`` or
after ``k_max`` iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .grid import (
    VectorField2,
    clip_field,
    divergence,
    gradient,
    laplacian,
    validate_field,
)
from .prior import StructuralPrior, prior_energy, prior_gradient, structure_op, structure_op_adjoint
from .spectral import DC_GUARD, NeumannSpectrum, dct2_forward, dct2_inverse, kernel_symbol, solve_bias, solve_helmholtz

# Gradient-magnitude guard for the total-variation subgradient only; the
# solver itself never divides by |grad S|.
_TV_EPS = 1e-12

CG_MAX_ITER = 200
CG_RTOL = 1e-8           # solve target
CG_WARN_RTOL = 1e-6      # contract bound; a residual above this is reported


@dataclass(frozen=True)
class SolverParams:
    """Model weights and run controls, with validated sign conventions.

    ``eps_w`` (the zero-order weight of the illumination solve) defaults to
    ``lambda_i``; it must be set explicitly when ``lambda_i`` is zero.
    """

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
    eps_w: Optional[float] = None
    k_max: int = 30
    delta_tol: float = 1e-4
    v_pre_from_smoothed: bool = False

    def __post_init__(self):
        if self.eps_w is None:
            object.__setattr__(self, "eps_w", self.lambda_i)
        checks = [
            ("lambda_i", self.lambda_i >= 0),
            ("alpha_b", self.alpha_b >= 0),
            ("beta", self.beta >= 0),
            ("theta", self.theta > 0),
            ("tau", self.tau >= 0),
            ("rho1", self.rho1 > 0),
            ("sigma", self.sigma > 0),
            ("alpha_mag", self.alpha_mag > 0),
            ("eps_div", self.eps_div > 0),
            ("eps_norm", self.eps_norm > 0),
            ("eps_w", self.eps_w > 0),
            ("k_max", self.k_max >= 1),
            ("delta_tol", self.delta_tol > 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid SolverParams.{name}: {getattr(self, name)}")


class SolverContext(NamedTuple):
    """Read-only per-run precomputations shared by all updates."""

    image: np.ndarray
    spectrum: NeumannSpectrum
    prior: StructuralPrior
    precond_smooth: np.ndarray  # eigenvalues of L*L for the S preconditioner


@dataclass
class SolverState:
    """Per-iteration iterates and traces."""

    s_field: np.ndarray
    b_field: np.ndarray
    u_field: np.ndarray
    d_field: VectorField2
    p_field: VectorField2
    c1: float = 0.0
    c2: float = 0.0
    m_val: float = 0.0
    delta_c: float = 0.0
    iteration: int = 0
    energy_trace: list = field(default_factory=list)
    u_change_trace: list = field(default_factory=list)
    primal_residual_trace: list = field(default_factory=list)
    init_fallback: bool = False
    degenerate_stats_iterations: list = field(default_factory=list)
    cg_warning_iterations: list = field(default_factory=list)


@dataclass(frozen=True)
class RunReport:
    iterations: int
    wall_seconds: float
    converged: bool
    final_energy: float
    init_fallback: bool
    degenerate_stats_iterations: tuple
    cg_warning_iterations: tuple
    energy_trace: tuple
    u_change_trace: tuple
    primal_residual_trace: tuple


@dataclass(frozen=True)
class SegmentationResult:
    """Final mask, corrected image, decomposition layers, and run report."""

    mask: np.ndarray             # int8, +1 foreground / -1 background
    corrected_image: np.ndarray  # intensity domain, clipped to [0, 1]
    s_field: np.ndarray
    b_field: np.ndarray
    u_field: np.ndarray
    input_image: np.ndarray      # the log-domain input the solver ran on
    report: RunReport


def sign_mask(u: np.ndarray) -> np.ndarray:
    """Binary labels from the relaxed field; the tie at exactly 0 maps to +1."""
    return np.where(u >= 0.0, 1, -1).astype(np.int8)


def initialize(image: np.ndarray, params: SolverParams) -> tuple[SolverState, SolverContext]:
    """Build the starting iterates and the shared spectral/prior context.

    The label field starts as the sign of the mean-centered image. A constant
    image leaves that sign undefined, so a centered disk of radius
    ``min(H, W)/4`` is used instead and flagged in the report.
    """
    image = validate_field(image, "image")
    h, w = image.shape
    spectrum = NeumannSpectrum.for_shape(h, w)
    prior = StructuralPrior.from_image(
        image,
        sigma=params.sigma,
        alpha_mag=params.alpha_mag,
        eps_norm=params.eps_norm,
        smooth_reference=params.v_pre_from_smoothed,
    )
    sym = kernel_symbol(prior.kernel, h)[:, None] * kernel_symbol(prior.kernel, w)[None, :]
    precond_smooth = (sym * sym) * spectrum.eigenvalues

    fallback = bool(np.ptp(image) < 1e-12)
    if fallback:
        yy, xx = np.mgrid[0:h, 0:w]
        r = min(h, w) / 4.0
        inside = (yy - (h - 1) / 2.0) ** 2 + (xx - (w - 1) / 2.0) ** 2 <= r * r
        u0 = np.where(inside, 1.0, -1.0)
    else:
        u0 = np.where(image >= image.mean(), 1.0, -1.0)

    state = SolverState(
        s_field=image.copy(),
        b_field=np.zeros_like(image),
        u_field=u0,
        d_field=VectorField2(np.zeros_like(image), np.zeros_like(image)),
        p_field=VectorField2(np.zeros_like(image), np.zeros_like(image)),
        init_fallback=fallback,
    )
    ctx = SolverContext(image=image, spectrum=spectrum, prior=prior, precond_smooth=precond_smooth)
    return state, ctx


def soft_mask(u: np.ndarray) -> np.ndarray:
    return (1.0 + u) / 2.0


def update_region_stats(state: SolverState, params: SolverParams) -> tuple[float, float]:
    """Soft means of S inside and outside the current label field."""
    w = soft_mask(state.u_field)
    c1 = float(np.sum(state.s_field * w) / (np.sum(w) + params.eps_div))
    c2 = float(np.sum(state.s_field * (1.0 - w)) / (np.sum(1.0 - w) + params.eps_div))
    return c1, c2


def update_u(state: SolverState, params: SolverParams, ctx: SolverContext) -> np.ndarray:
    """Closed-form label solve followed by projection onto [-1, 1].

    Solves ``(delta_c^2 - theta*Lap) u = delta_c (S - m)`` in the cosine
    domain. A vanishing contrast ``delta_c^2 < DC_GUARD`` leaves the system
    ill-conditioned at the constant mode; the solve is regularized and the
    iteration recorded.
    """
    c = state.delta_c * state.delta_c
    if c < DC_GUARD:
        state.degenerate_stats_iterations.append(state.iteration + 1)
    rhs = state.delta_c * (state.s_field - state.m_val)
    raw = solve_helmholtz(rhs, c, params.theta, ctx.spectrum)
    return clip_field(raw, -1.0, 1.0)


def update_b(state: SolverState, params: SolverParams, ctx: SolverContext) -> np.ndarray:
    """Illumination layer from the current reflectance residual."""
    return solve_bias(ctx.image - state.s_field, params.eps_w, params.alpha_b, ctx.spectrum)


def s_operator(
    s: np.ndarray, weight: np.ndarray, params: SolverParams, prior: StructuralPrior
) -> np.ndarray:
    """Apply the SPD reflectance system ``(1+lambda_i)I - rho1*Lap + 2 tau L*(w L .)``."""
    out = (1.0 + params.lambda_i) * s - params.rho1 * laplacian(s)
    if params.tau > 0.0:
        g = structure_op(s, prior.kernel)
        out += 2.0 * params.tau * structure_op_adjoint(
            VectorField2(weight * g.x, weight * g.y), prior.kernel
        )
    return out


def s_rhs(state: SolverState, params: SolverParams, ctx: SolverContext, weight: np.ndarray) -> np.ndarray:
    sffr = state.m_val + state.delta_c * state.u_field
    rhs = sffr + params.lambda_i * (ctx.image - state.b_field)
    rhs -= params.rho1 * (divergence(state.d_field) - divergence(state.p_field))
    if params.tau > 0.0:
        v = ctx.prior.v_pre
        rhs += 2.0 * params.tau * structure_op_adjoint(
            VectorField2(weight * v.x, weight * v.y), ctx.prior.kernel
        )
    return rhs


def solve_s_system(
    rhs: np.ndarray,
    weight: np.ndarray,
    params: SolverParams,
    ctx: SolverContext,
    x0: np.ndarray,
    rtol: float = CG_RTOL,
    max_iter: int = CG_MAX_ITER,
) -> tuple[np.ndarray, float, int]:
    """Preconditioned CG on the reflectance system, warm-started at ``x0``.

    The preconditioner replaces the spatially varying weight by its mean,
    which makes the operator diagonal in the cosine basis and exactly
    invertible there. Returns (solution, relative residual, iterations).
    """
    denom = (
        (1.0 + params.lambda_i)
        + params.rho1 * ctx.spectrum.eigenvalues
        + 2.0 * params.tau * float(weight.mean()) * ctx.precond_smooth
    )

    def precond(r):
        return dct2_inverse(dct2_forward(r) / denom)

    b_norm = float(np.linalg.norm(rhs))
    if b_norm == 0.0:
        return np.zeros_like(rhs), 0.0, 0
    x = x0.copy()
    r = rhs - s_operator(x, weight, params, ctx.prior)
    z = precond(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    n_iter = 0
    res = float(np.linalg.norm(r))
    while res > rtol * b_norm and n_iter < max_iter:
        ap = s_operator(p, weight, params, ctx.prior)
        alpha = rz / float(np.sum(p * ap))
        x = x + alpha * p
        r = r - alpha * ap
        z = precond(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
        res = float(np.linalg.norm(r))
        n_iter += 1
    return x, res / b_norm, n_iter


def update_s(state: SolverState, params: SolverParams, ctx: SolverContext) -> np.ndarray:
    """Reflectance update; records a warning when CG misses its residual contract."""
    weight = soft_mask(state.u_field)
    rhs = s_rhs(state, params, ctx, weight)
    s_new, rel_res, _ = solve_s_system(rhs, weight, params, ctx, x0=state.s_field)
    if rel_res > CG_WARN_RTOL:
        state.cg_warning_iterations.append(state.iteration + 1)
    return s_new


def shrink(v: VectorField2, threshold: float) -> VectorField2:
    """Per-pixel vector shrinkage: scale each 2-vector by max(1 - t/|z|, 0)."""
    mag = np.hypot(v.x, v.y)
    factor = np.where(mag > 0.0, np.maximum(1.0 - threshold / np.maximum(mag, _TV_EPS), 0.0), 0.0)
    return VectorField2(factor * v.x, factor * v.y)


def update_d(state: SolverState, params: SolverParams) -> VectorField2:
    g = gradient(state.s_field)
    z = VectorField2(g.x + state.p_field.x, g.y + state.p_field.y)
    return shrink(z, params.beta / params.rho1)


def update_p(state: SolverState) -> VectorField2:
    # group the residual first so a zero constraint gap leaves p bit-identical
    g = gradient(state.s_field)
    return VectorField2(
        state.p_field.x + (g.x - state.d_field.x),
        state.p_field.y + (g.y - state.d_field.y),
    )


# --- energies -------------------------------------------------------------

def total_energy(
    s: np.ndarray,
    b: np.ndarray,
    u: np.ndarray,
    c1: float,
    c2: float,
    image: np.ndarray,
    params: SolverParams,
    prior: StructuralPrior,
) -> float:
    """Full model objective at the given iterates (region means held fixed).

    The label-smoothness term carries the 1/2 that makes its variational
    derivative exactly ``-theta * Lap(u)``, matching the u-subproblem.
    """
    w = soft_mask(u)
    sffr = (c1 + c2) / 2.0 + (c1 - c2) / 2.0 * u
    fit = 0.5 * float(np.sum((s - sffr) ** 2))
    retinex = 0.5 * params.lambda_i * float(np.sum((image - s - b) ** 2))
    gb = gradient(b)
    smooth_b = 0.5 * params.alpha_b * float(np.sum(gb.x**2 + gb.y**2))
    gs = gradient(s)
    tv = params.beta * float(np.sum(np.hypot(gs.x, gs.y)))
    gu = gradient(u)
    smooth_u = 0.5 * params.theta * float(np.sum(gu.x**2 + gu.y**2))
    return fit + retinex + smooth_b + tv + smooth_u + prior_energy(s, w, prior, params.tau)


def energy_gradient_s(s, b, u, c1, c2, image, params, prior):
    w = soft_mask(u)
    sffr = (c1 + c2) / 2.0 + (c1 - c2) / 2.0 * u
    grad = (s - sffr) - params.lambda_i * (image - s - b)
    gs = gradient(s)
    mag = np.maximum(np.hypot(gs.x, gs.y), _TV_EPS)
    grad -= params.beta * divergence(VectorField2(gs.x / mag, gs.y / mag))
    return grad + prior_gradient(s, w, prior, params.tau)


def energy_gradient_b(s, b, u, c1, c2, image, params, prior):
    return -params.lambda_i * (image - s - b) - params.alpha_b * laplacian(b)


def energy_gradient_u(s, b, u, c1, c2, image, params, prior):
    # the soft mask depends on u, so the prior misfit contributes its density/2
    delta_c = (c1 - c2) / 2.0
    sffr = (c1 + c2) / 2.0 + delta_c * u
    grad = -delta_c * (s - sffr) - params.theta * laplacian(u)
    if params.tau > 0.0:
        g = structure_op(s, prior.kernel)
        rx = g.x - prior.v_pre.x
        ry = g.y - prior.v_pre.y
        grad = grad + 0.5 * params.tau * (rx * rx + ry * ry)
    return grad


def augmented_lagrangian(
    s: np.ndarray,
    b: np.ndarray,
    u: np.ndarray,
    d: VectorField2,
    p: VectorField2,
    c1: float,
    c2: float,
    w_prior: np.ndarray,
    image: np.ndarray,
    params: SolverParams,
    prior: StructuralPrior,
) -> float:
    """Split objective with the gradient constraint coupled at weight rho1/2.

    ``w_prior`` is passed explicitly because the updates treat the prior's
    soft mask as frozen data within each block solve.
    """
    sffr = (c1 + c2) / 2.0 + (c1 - c2) / 2.0 * u
    fit = 0.5 * float(np.sum((s - sffr) ** 2))
    retinex = 0.5 * params.lambda_i * float(np.sum((image - s - b) ** 2))
    gb = gradient(b)
    smooth_b = 0.5 * params.alpha_b * float(np.sum(gb.x**2 + gb.y**2))
    gu = gradient(u)
    smooth_u = 0.5 * params.theta * float(np.sum(gu.x**2 + gu.y**2))
    tv_d = params.beta * float(np.sum(np.hypot(d.x, d.y)))
    gs = gradient(s)
    cx = d.x - gs.x - p.x
    cy = d.y - gs.y - p.y
    coupling = 0.5 * params.rho1 * float(np.sum(cx * cx + cy * cy))
    return (
        fit
        + retinex
        + smooth_b
        + smooth_u
        + tv_d
        + prior_energy(s, w_prior, prior, params.tau)
        + coupling
    )


# --- driver ---------------------------------------------------------------

def run(image: np.ndarray, params: SolverParams | None = None) -> SegmentationResult:
    """Run the full alternating scheme on a log-domain image."""
    if params is None:
        params = SolverParams()
    t0 = time.perf_counter()
    state, ctx = initialize(image, params)
    converged = False
    for k in range(params.k_max):
        state.c1, state.c2 = update_region_stats(state, params)
        state.m_val = (state.c1 + state.c2) / 2.0
        state.delta_c = (state.c1 - state.c2) / 2.0

        u_prev = state.u_field
        state.u_field = update_u(state, params, ctx)
        u_change = float(
            np.linalg.norm(state.u_field - u_prev) / max(np.linalg.norm(u_prev), 1.0)
        )

        state.b_field = update_b(state, params, ctx)
        # the reflectance solve sees the soft mask of the label field just updated
        state.s_field = update_s(state, params, ctx)
        state.d_field = update_d(state, params)
        state.p_field = update_p(state)

        g = gradient(state.s_field)
        primal = float(
            np.linalg.norm(np.hypot(g.x - state.d_field.x, g.y - state.d_field.y))
        )
        state.iteration = k + 1
        state.u_change_trace.append(u_change)
        state.primal_residual_trace.append(primal)
        state.energy_trace.append(
            total_energy(
                state.s_field, state.b_field, state.u_field,
                state.c1, state.c2, ctx.image, params, ctx.prior,
            )
        )
        if u_change < params.delta_tol:
            converged = True
            break

    report = RunReport(
        iterations=state.iteration,
        wall_seconds=time.perf_counter() - t0,
        converged=converged,
        final_energy=state.energy_trace[-1],
        init_fallback=state.init_fallback,
        degenerate_stats_iterations=tuple(state.degenerate_stats_iterations),
        cg_warning_iterations=tuple(state.cg_warning_iterations),
        energy_trace=tuple(state.energy_trace),
        u_change_trace=tuple(state.u_change_trace),
        primal_residual_trace=tuple(state.primal_residual_trace),
    )
    corrected = np.minimum(np.exp(ctx.image - state.b_field), 1.0)
    return SegmentationResult(
        mask=sign_mask(state.u_field),
        corrected_image=corrected,
        s_field=state.s_field,
        b_field=state.b_field,
        u_field=state.u_field,
        input_image=ctx.image,
        report=report,
    )
