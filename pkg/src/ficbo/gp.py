"""Exact Gaussian-process machinery: joint prior draws and posterior regression.

Kernels are sampled from the prior or fixed by the caller; there is no
marginal-likelihood fitting anywhere in this package.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .kernels import KernelSpec, kernel_matrix
from .validation import check_matrix, check_vector, check_consistent_length

# Jitter schedule relative to the kernel output scale. Pools of hundreds of
# nearly-duplicate points make the raw kernel matrix numerically singular.
JITTER_START = 1e-6
JITTER_MAX = 1e-2
JITTER_GROWTH = 10.0


def jittered_cholesky(K: np.ndarray, output_scale: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K + jitter*I, escalating jitter on failure.

    Returns (L, jitter). Raises np.linalg.LinAlgError once the schedule is
    exhausted.
    """
    jitter = JITTER_START * output_scale
    cap = JITTER_MAX * output_scale
    while True:
        try:
            L = cholesky(K + jitter * np.eye(K.shape[0]), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
            if jitter > cap:
                raise np.linalg.LinAlgError(
                    f"Cholesky failed at maximum jitter {cap:.3g}"
                )


def sample_gp_joint(
    rng: np.random.Generator, spec: KernelSpec, points: np.ndarray
) -> np.ndarray:
    """One joint draw from the zero-mean GP prior over a finite point set.

    The draw is computed in a canonical (lexicographic) point ordering and
    mapped back, so the realized function does not depend on how the caller
    ordered the rows.
    """
    points = check_matrix(points, "points")
    if points.shape[0] < 1:
        raise ValueError("need at least one point")
    order = np.lexsort(points.T[::-1])
    K = kernel_matrix(spec, points[order])
    L, _ = jittered_cholesky(K, spec.output_scale)
    draw = L @ rng.standard_normal(points.shape[0])
    out = np.empty_like(draw)
    out[order] = draw
    return out


class GpRegressor:
    """Exact GP regression with a fixed kernel.

    Follows the fit/predict estimator convention. The Cholesky factor of
    (K + noise*I + jitter*I) is cached at fit time; the fitted model is
    immutable afterwards and safe to share across episodes.
    """

    def __init__(self, kernel: KernelSpec, noise_variance: float = 1e-4):
        if noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        self.kernel = kernel
        self.noise_variance = float(noise_variance)
        self.train_inputs_: np.ndarray | None = None
        self.train_targets_: np.ndarray | None = None
        self.factor_: np.ndarray | None = None
        self.alpha_: np.ndarray | None = None
        self.jitter_: float | None = None

    def get_params(self) -> dict:
        return {"kernel": self.kernel, "noise_variance": self.noise_variance}

    def fit(self, X, y) -> "GpRegressor":
        X = check_matrix(X, "X")
        y = check_vector(y, "y")
        check_consistent_length(X, y)
        if X.shape[1] != self.kernel.dim:
            raise ValueError(
                f"X has {X.shape[1]} columns but kernel dim is {self.kernel.dim}"
            )
        K = kernel_matrix(self.kernel, X) + self.noise_variance * np.eye(len(X))
        L, jitter = jittered_cholesky(K, self.kernel.output_scale)
        self.train_inputs_ = X
        self.train_targets_ = y
        self.factor_ = L
        self.jitter_ = jitter
        self.alpha_ = cho_solve((L, True), y)
        return self

    def predict(self, X, return_std: bool = False):
        """Posterior mean (and optionally std) at query points.

        Variance is clipped to be nonnegative.
        """
        if self.factor_ is None:
            raise RuntimeError("GpRegressor is not fitted")
        X = check_matrix(X, "X")
        if X.shape[1] != self.kernel.dim:
            raise ValueError(
                f"query has {X.shape[1]} columns but kernel dim is {self.kernel.dim}"
            )
        k_star = kernel_matrix(self.kernel, self.train_inputs_, X)
        mean = k_star.T @ self.alpha_
        if not return_std:
            return mean
        v = solve_triangular(self.factor_, k_star, lower=True)
        var = self.kernel.output_scale - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        return mean, np.sqrt(var)

    def predict_variance(self, X) -> tuple[np.ndarray, np.ndarray]:
        mean, std = self.predict(X, return_std=True)
        return mean, std**2
