"""Estimator-style front end so the solver composes with sklearn pipelines.

Segmentation here is transductive (the model is solved per image), so the
class follows the clustering convention: ``fit`` computes attributes for the
image it was given, ``fit_predict`` returns the binary mask, and
``fit_transform`` returns the bias-corrected intensity image.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .grid import validate_field
from .pgmio import INTENSITY_FLOOR
from .solver import SolverParams, run


def image_to_log(image) -> np.ndarray:
    """Normalize a grayscale image and move it to the log domain.

    Integer arrays are scaled by their dtype range; float arrays must already
    lie in [0, 1]. Intensities are compressed onto [INTENSITY_FLOOR, 1]
    before the log so the result is finite everywhere.
    """
    arr = np.asarray(image)
    if arr.dtype.kind in "ui":
        arr = arr.astype(np.float64) / np.iinfo(arr.dtype).max
    arr = validate_field(arr, "image")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("float images must have intensities in [0, 1]")
    return np.log(INTENSITY_FLOOR + (1.0 - INTENSITY_FLOOR) * arr)


class ReflectanceSegmenter(BaseEstimator):
    """Joint segmentation and bias-field correction of a grayscale image.

    Parameters mirror :class:`reflsm.solver.SolverParams`. After ``fit``:

    - ``mask_``: int8 labels, +1 foreground / -1 background
    - ``soft_label_``: the relaxed label field in [-1, 1]
    - ``reflectance_`` / ``bias_field_``: log-domain decomposition layers
    - ``corrected_``: bias-corrected intensity image in [0, 1]
    - ``n_iter_``, ``converged_``, ``result_``
    """

    def __init__(
        self,
        lambda_i=1.0,
        alpha_b=15.0,
        beta=0.02,
        theta=0.1,
        tau=0.5,
        rho1=1.0,
        sigma=3.0,
        alpha_mag=0.1,
        eps_div=1e-8,
        eps_norm=1e-6,
        eps_w=None,
        k_max=30,
        delta_tol=1e-4,
        v_pre_from_smoothed=False,
    ):
        self.lambda_i = lambda_i
        self.alpha_b = alpha_b
        self.beta = beta
        self.theta = theta
        self.tau = tau
        self.rho1 = rho1
        self.sigma = sigma
        self.alpha_mag = alpha_mag
        self.eps_div = eps_div
        self.eps_norm = eps_norm
        self.eps_w = eps_w
        self.k_max = k_max
        self.delta_tol = delta_tol
        self.v_pre_from_smoothed = v_pre_from_smoothed

    def _solver_params(self) -> SolverParams:
        return SolverParams(
            lambda_i=self.lambda_i,
            alpha_b=self.alpha_b,
            beta=self.beta,
            theta=self.theta,
            tau=self.tau,
            rho1=self.rho1,
            sigma=self.sigma,
            alpha_mag=self.alpha_mag,
            eps_div=self.eps_div,
            eps_norm=self.eps_norm,
            eps_w=self.eps_w,
            k_max=self.k_max,
            delta_tol=self.delta_tol,
            v_pre_from_smoothed=self.v_pre_from_smoothed,
        )

    def fit(self, X, y=None):
        """Run the solver on a single grayscale image (2-D array)."""
        result = run(image_to_log(X), self._solver_params())
        self.result_ = result
        self.mask_ = result.mask
        self.soft_label_ = result.u_field
        self.reflectance_ = result.s_field
        self.bias_field_ = result.b_field
        self.corrected_ = result.corrected_image
        self.n_iter_ = result.report.iterations
        self.converged_ = result.report.converged
        return self

    def fit_predict(self, X, y=None):
        """Segment the image; returns the +1/-1 mask."""
        return self.fit(X).mask_

    def fit_transform(self, X, y=None):
        """Correct the image; returns intensities in [0, 1]."""
        return self.fit(X).corrected_

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("this ReflectanceSegmenter instance is not fitted yet")

    def predict(self, X=None):
        """Mask of the fitted image; refits when a new image is supplied."""
        if X is not None:
            return self.fit_predict(X)
        self._check_fitted()
        return self.mask_

    def transform(self, X=None):
        """Corrected image of the fitted input; refits when given new data."""
        if X is not None:
            return self.fit_transform(X)
        self._check_fitted()
        return self.corrected_
