"""Matern-family covariance kernels with ARD lengthscales.

The scaled distance r is the Euclidean norm of the per-dimension
lengthscale-weighted difference; isotropic kernels are the special case of
equal lengthscale entries. The squared-exponential kernel is treated as the
nu = infinity member of the family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_matrix, check_same_dim

KERNEL_FAMILIES = ("matern12", "matern32", "matern52", "rbf")

LENGTHSCALE_BOUNDS = (0.1, 2.0)  # multiplied by sqrt(d)
OUTPUT_SCALE_BOUNDS = (0.1, 1.0)
P_ISOTROPIC = 0.5


@dataclass(frozen=True)
class KernelSpec:
    """A sampled stationary kernel: family, ARD lengthscales, output scale."""

    family: str
    lengthscales: np.ndarray
    output_scale: float
    isotropic: bool = False

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=np.float64))
        object.__setattr__(self, "lengthscales", ls)
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")
        if self.isotropic and not np.all(ls == ls[0]):
            raise ValueError("isotropic spec requires equal lengthscales")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


def sample_kernel_spec(rng: np.random.Generator, d: int) -> KernelSpec:
    """Draw a kernel spec from the shared hyperparameter prior.

    Family is uniform over the four members, lengthscales are
    U(0.1*sqrt(d), 2.0*sqrt(d)), output scale is U(0.1, 1.0), and the kernel
    is isotropic with probability 0.5.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    family = KERNEL_FAMILIES[rng.integers(len(KERNEL_FAMILIES))]
    lo, hi = (LENGTHSCALE_BOUNDS[0] * np.sqrt(d), LENGTHSCALE_BOUNDS[1] * np.sqrt(d))
    isotropic = rng.random() < P_ISOTROPIC
    if isotropic:
        ls = np.full(d, rng.uniform(lo, hi))
    else:
        ls = rng.uniform(lo, hi, size=d)
    output_scale = rng.uniform(*OUTPUT_SCALE_BOUNDS)
    return KernelSpec(family, ls, float(output_scale), isotropic)


def _correlation(family: str, r: np.ndarray) -> np.ndarray:
    if family == "matern12":
        return np.exp(-r)
    if family == "matern32":
        sr = np.sqrt(3.0) * r
        return (1.0 + sr) * np.exp(-sr)
    if family == "matern52":
        sr = np.sqrt(5.0) * r
        return (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)
    if family == "rbf":
        return np.exp(-0.5 * r * r)
    raise ValueError(f"unknown kernel family {family!r}")


def scaled_distance(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise lengthscale-weighted Euclidean distances, shape (n, m)."""
    a = check_matrix(a, "a") / spec.lengthscales
    b = check_matrix(b, "b") / spec.lengthscales
    check_same_dim(a, b, "a, b")
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Covariance between two points."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape or a.shape[0] != spec.dim:
        raise ValueError(
            f"point dimensions {a.shape}, {b.shape} do not match spec dim {spec.dim}"
        )
    r = scaled_distance(spec, a[None, :], b[None, :])[0, 0]
    return float(spec.output_scale * _correlation(spec.family, np.asarray(r)))


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Covariance matrix K(a, b); K(a, a) when b is omitted."""
    if b is None:
        b = a
    r = scaled_distance(spec, a, b)
    return spec.output_scale * _correlation(spec.family, r)
