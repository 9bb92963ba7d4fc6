"""Structured degradation operators for auxiliary feedback signals.

Five operator families distort an ideal source signal: homoscedastic noise,
catastrophic replacement, smooth additive GP bias, local distortion bumps,
and a constant shift. The pipeline applies them in that fixed order; each is
activated independently per task. Noise is always applied, with its scale
drawn from a range that includes zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import sample_gp_joint
from .kernels import KernelSpec, sample_kernel_spec
from .validation import check_matrix, check_vector

PIPELINE_ORDER = ("noise", "catastrophic", "gp_bias", "local", "shift")


@dataclass
class BiasConfig:
    """Activation probabilities and parameter priors for the operators."""

    p_gp_bias: float = 0.2
    p_local: float = 0.2
    p_shift: float = 0.2
    p_catastrophic: float = 0.05
    noise_scale_range: tuple[float, float] = (0.0, 0.2)
    gp_lengthscale_range: tuple[float, float] = (0.5, 3.0)
    gp_max_std_range: tuple[float, float] = (0.2, 1.0)
    gp_scale_range: tuple[float, float] = (0.2, 2.0)
    local_n_centers: tuple[int, ...] = (1, 2, 3)
    local_decay_range: tuple[float, float] = (0.5, 1.5)
    local_magnitude_range: tuple[float, float] = (0.2, 0.8)
    shift_range: tuple[float, float] = (-0.3, 0.3)

    def __post_init__(self):
        for p in (self.p_gp_bias, self.p_local, self.p_shift, self.p_catastrophic):
            if not 0.0 <= p <= 1.0:
                raise ValueError("activation probabilities must be in [0, 1]")
        for lo, hi in (
            self.noise_scale_range,
            self.gp_lengthscale_range,
            self.gp_max_std_range,
            self.gp_scale_range,
            self.local_decay_range,
            self.local_magnitude_range,
            self.shift_range,
        ):
            if lo > hi:
                raise ValueError("parameter ranges must be ordered (lo <= hi)")

    @classmethod
    def disabled(cls) -> "BiasConfig":
        """All operators off and zero noise; the pipeline is the identity."""
        return cls(
            p_gp_bias=0.0,
            p_local=0.0,
            p_shift=0.0,
            p_catastrophic=0.0,
            noise_scale_range=(0.0, 0.0),
        )


@dataclass
class BiasRecord:
    """Which operators fired and their sampled parameters.

    Diagnostics only; never exposed through the optimizer-facing task view.
    """

    noise_sigma: float = 0.0
    catastrophic: bool = False
    gp_bias: bool = False
    local: bool = False
    shift: bool = False
    params: dict = field(default_factory=dict)

    def fired(self) -> list[str]:
        names = []
        if self.noise_sigma > 0:
            names.append("noise")
        for name in ("catastrophic", "gp_bias", "local", "shift"):
            if getattr(self, name):
                names.append(name)
        return names

    def to_json(self) -> dict:
        return {
            "noise_sigma": self.noise_sigma,
            "catastrophic": self.catastrophic,
            "gp_bias": self.gp_bias,
            "local": self.local,
            "shift": self.shift,
            "params": {k: _jsonify(v) for k, v in self.params.items()},
        }


def _jsonify(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def bias_noise(rng: np.random.Generator, signal: np.ndarray, sigma: float) -> np.ndarray:
    """Add iid Gaussian noise with standard deviation sigma."""
    signal = check_vector(signal, "signal")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return signal.copy()
    return signal + rng.normal(0.0, sigma, size=signal.shape)


def bias_shift(signal: np.ndarray, delta: float) -> np.ndarray:
    """Add a constant offset to every entry."""
    return check_vector(signal, "signal") + delta


def bias_gp_additive(
    rng: np.random.Generator,
    signal: np.ndarray,
    points: np.ndarray,
    lengthscale: float,
    scale: float,
    max_std: float,
) -> np.ndarray:
    """Add a smooth RBF-GP perturbation whose sample std is capped at max_std.

    The scale parameter shapes the raw fluctuations; the draw is then
    renormalized so its realized std is min(raw std, max_std).
    """
    signal = check_vector(signal, "signal")
    points = check_matrix(points, "points")
    spec = KernelSpec(
        "rbf", np.full(points.shape[1], lengthscale), max(scale, 1e-12), isotropic=True
    )
    b = sample_gp_joint(rng, spec, points)
    raw_std = float(np.std(b))
    if raw_std > 0:
        b = b / raw_std * min(raw_std, max_std)
    return signal + b


def bias_local(
    rng: np.random.Generator,
    signal: np.ndarray,
    points: np.ndarray,
    n_centers: int,
    magnitude: float,
    decay: float,
) -> np.ndarray:
    """Add Gaussian bumps of the given magnitude around randomly chosen rows.

    The bump at distance d from a center is magnitude * exp(-d^2 / (2 decay^2)),
    summed over centers.
    """
    signal = check_vector(signal, "signal")
    points = check_matrix(points, "points")
    if n_centers < 1:
        raise ValueError("n_centers must be >= 1")
    idx = rng.choice(points.shape[0], size=min(n_centers, points.shape[0]), replace=False)
    centers = points[idx]
    d2 = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    bump = magnitude * np.sum(np.exp(-d2 / (2.0 * decay * decay)), axis=1)
    return signal + bump


def bias_catastrophic(
    rng: np.random.Generator,
    signal: np.ndarray,
    points: np.ndarray,
    kernel: KernelSpec,
) -> np.ndarray:
    """Replace the signal with an independent GP draw; the input is discarded."""
    check_vector(signal, "signal")
    points = check_matrix(points, "points")
    return sample_gp_joint(rng, kernel, points)


def apply_bias_pipeline(
    rng: np.random.Generator,
    signal: np.ndarray,
    points: np.ndarray,
    cfg: BiasConfig,
    order: tuple[str, ...] = PIPELINE_ORDER,
) -> tuple[np.ndarray, BiasRecord]:
    """Run the full degradation pipeline over one signal realization.

    Operators are applied in `order` (noise, catastrophic, gp_bias, local,
    shift by default); each activation and its parameters are drawn from the
    config priors and recorded. The `order` override exists for
    order-sensitivity diagnostics only.
    """
    signal = check_vector(signal, "signal").copy()
    points = check_matrix(points, "points")
    rec = BiasRecord()
    for name in order:
        if name == "noise":
            sigma = float(rng.uniform(*cfg.noise_scale_range))
            rec.noise_sigma = sigma
            signal = bias_noise(rng, signal, sigma)
        elif name == "catastrophic":
            if rng.random() < cfg.p_catastrophic:
                rec.catastrophic = True
                spec = sample_kernel_spec(rng, points.shape[1])
                rec.params["catastrophic_kernel"] = spec.family
                signal = bias_catastrophic(rng, signal, points, spec)
        elif name == "gp_bias":
            if rng.random() < cfg.p_gp_bias:
                rec.gp_bias = True
                ls = float(rng.uniform(*cfg.gp_lengthscale_range))
                scale = float(rng.uniform(*cfg.gp_scale_range))
                max_std = float(rng.uniform(*cfg.gp_max_std_range))
                rec.params["gp_bias"] = {"lengthscale": ls, "scale": scale, "max_std": max_std}
                signal = bias_gp_additive(rng, signal, points, ls, scale, max_std)
        elif name == "local":
            if rng.random() < cfg.p_local:
                rec.local = True
                n_centers = int(rng.choice(cfg.local_n_centers))
                mag = float(rng.uniform(*cfg.local_magnitude_range))
                if rng.random() < 0.5:  # over- and under-estimation both occur
                    mag = -mag
                decay = float(rng.uniform(*cfg.local_decay_range))
                rec.params["local"] = {"n_centers": n_centers, "magnitude": mag, "decay": decay}
                signal = bias_local(rng, signal, points, n_centers, mag, decay)
        elif name == "shift":
            if rng.random() < cfg.p_shift:
                rec.shift = True
                delta = float(rng.uniform(*cfg.shift_range))
                rec.params["shift"] = {"delta": delta}
                signal = bias_shift(signal, delta)
        else:
            raise ValueError(f"unknown bias operator {name!r}")
    return signal, rec
