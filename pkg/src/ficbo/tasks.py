"""Synthetic task generation: additive feature-split and reweighted mixture priors.

Each sampled task bundles a candidate pool, noisy objective values, per-candidate
auxiliary feedback, an initial context, held-out prediction targets, and a
horizon. The latent full-dimensional pool, source weights, and bias parameters
are generation-side metadata; the optimizer-facing view never exposes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bias import BiasConfig, BiasRecord, apply_bias_pipeline
from .gp import GpRegressor, sample_gp_joint
from .kernels import KernelSpec, sample_kernel_spec
from .validation import check_matrix, check_vector

DOMAIN_HALF_WIDTH = 5.0
OBSERVATION_NOISE = 0.01
SOURCE_MODEL_NOISE = 1e-4


def _jsonify_meta(value):
    if isinstance(value, dict):
        return {k: _jsonify_meta(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_jsonify_meta(v) for v in value]
    return value


@dataclass(frozen=True)
class VisibilitySplit:
    """Coordinate split between optimizer-visible and source-visible inputs.

    The full input is (x_model, x_shared, x_src): the optimizer sees the first
    d_model coordinates (model-only plus shared), the source sees the last
    overlap + d_src coordinates (shared plus source-only).
    """

    d_model: int
    d_src: int
    overlap: int

    def __post_init__(self):
        if not 0 <= self.overlap <= self.d_model:
            raise ValueError("overlap must satisfy 0 <= overlap <= d_model")
        if self.d_src < 0 or self.d_model < 1:
            raise ValueError("invalid split dimensions")

    @property
    def d_full(self) -> int:
        return self.d_model + self.d_src

    @property
    def d_model_only(self) -> int:
        return self.d_model - self.overlap

    @property
    def d_src_visible(self) -> int:
        return self.overlap + self.d_src

    def project_model(self, x_full: np.ndarray) -> np.ndarray:
        return x_full[..., : self.d_model]

    def project_src(self, x_full: np.ndarray) -> np.ndarray:
        return x_full[..., self.d_model_only :]

    def model_only(self, x_full: np.ndarray) -> np.ndarray:
        return x_full[..., : self.d_model_only]


@dataclass
class AdditivePriorConfig:
    """Feature-split additive prior settings."""

    w_range: tuple[float, float] = (0.3, 0.9)
    d_src_choices: tuple[int, ...] = (1, 2)
    overlap_choices: tuple[int, ...] = (0, 1)
    n_src_choices: tuple[int, ...] = (10, 100)
    uniform_fraction: float = 0.25
    cluster_std_range: tuple[float, float] = (0.5, 1.5)
    n_centers_range: tuple[int, int] = (1, 5)
    source_mode: str = "model_based"
    target_signal: str = "hidden"

    def __post_init__(self):
        if not (0.0 <= self.w_range[0] <= self.w_range[1] <= 1.0):
            raise ValueError("w_range must be ordered and within [0, 1]")
        for choices in (self.d_src_choices, self.overlap_choices, self.n_src_choices):
            if len(choices) == 0:
                raise ValueError("choice sets must be nonempty")
        if not 0.0 <= self.uniform_fraction <= 1.0:
            raise ValueError("uniform_fraction must be in [0, 1]")
        if self.source_mode not in ("direct", "model_based"):
            raise ValueError(f"unknown source_mode {self.source_mode!r}")
        if self.target_signal not in ("hidden", "total"):
            raise ValueError(f"unknown target_signal {self.target_signal!r}")


def default_additive_config(d_model: int, **overrides) -> AdditivePriorConfig:
    """Additive config with the dimension-dependent source-data sizes."""
    n_src = (10, 100) if d_model == 1 else (30, 300)
    return AdditivePriorConfig(n_src_choices=n_src, **overrides)


@dataclass
class MixturePriorConfig:
    """Reweighted latent-component prior settings."""

    k_real: int = 3
    k_decoy_range: tuple[int, int] = (2, 8)
    alpha_src: float = 0.7
    p_src: float = 0.8

    def __post_init__(self):
        if self.k_real < 1:
            raise ValueError("k_real must be >= 1")
        if self.alpha_src <= 0:
            raise ValueError("alpha_src must be positive")
        if not 0.0 <= self.p_src <= 1.0:
            raise ValueError("p_src must be in [0, 1]")
        if self.k_decoy_range[0] > self.k_decoy_range[1] or self.k_decoy_range[0] < 0:
            raise ValueError("k_decoy_range must be ordered and nonnegative")


@dataclass(frozen=True)
class OptimizerView:
    """The only task surface a selection policy may consume."""

    pool: np.ndarray
    feedback: np.ndarray
    context_idx: np.ndarray
    horizon: int


@dataclass
class TaskInstance:
    """One sampled optimization episode.

    `pool_model` is the optimizer-visible candidate matrix; `pool_full` and
    `metadata` exist for generation-side diagnostics only and must never be
    fed to a policy. Objective values `y` carry the observation noise applied
    once at generation time.
    """

    pool_model: np.ndarray
    pool_full: np.ndarray
    y: np.ndarray
    u: np.ndarray
    context_idx: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray
    target_u: np.ndarray
    horizon: int
    noise: float = OBSERVATION_NOISE
    name: str = "prior"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pool_model = check_matrix(self.pool_model, "pool_model")
        self.pool_full = check_matrix(self.pool_full, "pool_full")
        self.y = check_vector(self.y, "y")
        self.u = check_vector(self.u, "u")
        self.context_idx = np.asarray(self.context_idx, dtype=np.int64)
        self.target_x = check_matrix(self.target_x, "target_x")
        self.target_y = check_vector(self.target_y, "target_y")
        self.target_u = check_vector(self.target_u, "target_u")
        n = self.pool_model.shape[0]
        if not (len(self.y) == len(self.u) == self.pool_full.shape[0] == n):
            raise ValueError("pool arrays have inconsistent lengths")
        if len(self.context_idx) < 1:
            raise ValueError("need at least one context point")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if n < self.horizon + len(self.context_idx) + 1:
            raise ValueError("pool too small for horizon plus context")

    @property
    def n_pool(self) -> int:
        return self.pool_model.shape[0]

    @property
    def d_model(self) -> int:
        return self.pool_model.shape[1]

    def optimizer_view(self) -> OptimizerView:
        return OptimizerView(
            pool=self.pool_model,
            feedback=self.u,
            context_idx=self.context_idx,
            horizon=self.horizon,
        )

    def to_json(self) -> dict:
        return {
            "schema": "ficbo.task.v1",
            "name": self.name,
            "pool_model": self.pool_model.tolist(),
            "pool_full": self.pool_full.tolist(),
            "y": self.y.tolist(),
            "u": self.u.tolist(),
            "context_idx": self.context_idx.tolist(),
            "target_x": self.target_x.tolist(),
            "target_y": self.target_y.tolist(),
            "target_u": self.target_u.tolist(),
            "horizon": int(self.horizon),
            "noise": float(self.noise),
            "metadata": _jsonify_meta(self.metadata),
        }

    @classmethod
    def from_json(cls, d: dict) -> "TaskInstance":
        if d.get("schema") != "ficbo.task.v1":
            raise ValueError(f"unsupported task schema {d.get('schema')!r}")
        return cls(
            pool_model=np.asarray(d["pool_model"], dtype=np.float64),
            pool_full=np.asarray(d["pool_full"], dtype=np.float64),
            y=np.asarray(d["y"], dtype=np.float64),
            u=np.asarray(d["u"], dtype=np.float64),
            context_idx=np.asarray(d["context_idx"], dtype=np.int64),
            target_x=np.asarray(d["target_x"], dtype=np.float64),
            target_y=np.asarray(d["target_y"], dtype=np.float64),
            target_u=np.asarray(d["target_u"], dtype=np.float64),
            horizon=int(d["horizon"]),
            noise=float(d["noise"]),
            name=d.get("name", "prior"),
            metadata=d.get("metadata", {}),
        )


def sample_source_points(
    rng: np.random.Generator,
    n: int,
    uniform_fraction: float,
    cluster_std: float,
    n_centers: int,
    d: int,
) -> np.ndarray:
    """Source-private inputs: a uniform share plus Gaussian clusters.

    ceil(uniform_fraction * n) points are uniform over the domain; the rest
    come from n_centers clusters with uniformly placed centers, clipped to
    the domain so exactly n points are returned.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= uniform_fraction <= 1.0:
        raise ValueError("uniform_fraction must be in [0, 1]")
    hw = DOMAIN_HALF_WIDTH
    n_uniform = int(np.ceil(uniform_fraction * n))
    parts = []
    if n_uniform > 0:
        parts.append(rng.uniform(-hw, hw, size=(n_uniform, d)))
    n_cluster = n - n_uniform
    if n_cluster > 0:
        centers = rng.uniform(-hw, hw, size=(n_centers, d))
        assign = rng.integers(n_centers, size=n_cluster)
        pts = centers[assign] + rng.normal(0.0, cluster_std, size=(n_cluster, d))
        parts.append(np.clip(pts, -hw, hw))
    return np.vstack(parts)


def build_source_model(
    rng: np.random.Generator,
    source_data: tuple[np.ndarray, np.ndarray],
    kernel: KernelSpec,
    noise: float = SOURCE_MODEL_NOISE,
) -> GpRegressor:
    """Fit the source's GP surrogate once; it stays fixed during the episode."""
    inputs, values = source_data
    inputs = check_matrix(inputs, "source inputs")
    values = check_vector(values, "source values")
    if inputs.shape[0] < 1:
        raise ValueError("need at least one source point")
    return GpRegressor(kernel, noise).fit(inputs, values)


def _sample_horizon(rng: np.random.Generator, horizon_range: tuple[int, int]) -> int:
    lo, hi = horizon_range
    return int(rng.integers(lo, hi + 1))


def _check_feasible(pool_size: int, horizon: int, n_context: int) -> None:
    if pool_size < horizon + n_context + 1:
        raise ValueError(
            f"pool_size {pool_size} cannot support horizon {horizon} "
            f"with {n_context} context points"
        )


def sample_additive_task(
    rng: np.random.Generator,
    cfg: AdditivePriorConfig,
    bias: BiasConfig,
    d_model: int,
    pool_size: int = 200,
    horizon_range: tuple[int, int] = (10, 20),
    n_targets: int = 100,
    n_context: int = 1,
    noise: float = OBSERVATION_NOISE,
) -> TaskInstance:
    """Draw one task from the feature-split additive prior.

    The objective combines an optimizer-only GP and a source-visible GP with
    weight w, normalized so the output scale is independent of w. The source's
    ideal signal is the source-visible component (or the full objective for
    the `total` signal variant), distorted by the bias pipeline, and either
    returned directly or smoothed through a GP source model fitted on
    source-private data.
    """
    horizon = _sample_horizon(rng, horizon_range)
    _check_feasible(pool_size, horizon, n_context)
    d_src = int(rng.choice(cfg.d_src_choices))
    overlap_opts = [o for o in cfg.overlap_choices if o <= d_model]
    overlap = int(rng.choice(overlap_opts))
    split = VisibilitySplit(d_model=d_model, d_src=d_src, overlap=overlap)
    hw = DOMAIN_HALF_WIDTH

    n_main = pool_size + n_targets
    if cfg.source_mode == "model_based":
        n_src_pts = int(rng.choice(cfg.n_src_choices))
        cluster_std = float(rng.uniform(*cfg.cluster_std_range))
        n_centers = int(rng.integers(cfg.n_centers_range[0], cfg.n_centers_range[1] + 1))
        src_points = sample_source_points(
            rng, n_src_pts, cfg.uniform_fraction, cluster_std, n_centers, split.d_full
        )
    else:
        src_points = np.empty((0, split.d_full))
    points = np.vstack(
        [rng.uniform(-hw, hw, size=(n_main, split.d_full)), src_points]
    )

    if split.d_model_only == 0:
        f_model = np.zeros(points.shape[0])
        w = 1.0
    else:
        spec_model = sample_kernel_spec(rng, split.d_model_only)
        f_model = sample_gp_joint(rng, spec_model, split.model_only(points))
        w = float(rng.uniform(*cfg.w_range))
    spec_src = sample_kernel_spec(rng, split.d_src_visible)
    f_src = sample_gp_joint(rng, spec_src, split.project_src(points))

    norm = np.sqrt((1.0 - w) ** 2 + w**2)
    y_raw = ((1.0 - w) * f_model + w * f_src) / norm

    ideal = f_src if cfg.target_signal == "hidden" else y_raw
    distorted, record = apply_bias_pipeline(rng, ideal, points, bias)

    if cfg.source_mode == "model_based":
        src_kernel = sample_kernel_spec(rng, split.d_src_visible)
        model = build_source_model(
            rng,
            (split.project_src(points[n_main:]), distorted[n_main:]),
            src_kernel,
        )
        u_all = model.predict(split.project_src(points[:n_main]))
    else:
        u_all = distorted[:n_main]

    y_all = y_raw[:n_main] + rng.normal(0.0, noise, size=n_main)
    context_idx = rng.choice(pool_size, size=n_context, replace=False)

    return TaskInstance(
        pool_model=split.project_model(points[:pool_size]),
        pool_full=points[:pool_size],
        y=y_all[:pool_size],
        u=u_all[:pool_size],
        context_idx=np.sort(context_idx),
        target_x=split.project_model(points[pool_size:n_main]),
        target_y=y_all[pool_size:n_main],
        target_u=u_all[pool_size:n_main],
        horizon=horizon,
        noise=noise,
        metadata={
            "prior": "additive",
            "w": w,
            "d_src": d_src,
            "overlap": overlap,
            "source_mode": cfg.source_mode,
            "target_signal": cfg.target_signal,
            "bias": record.to_json(),
            "pool_max": float(y_raw[:pool_size].max()),
            "pool_range": float(y_raw[:pool_size].max() - y_raw[:pool_size].min()),
            # component values at pool+target points (diagnostics only)
            "f_model": f_model[:n_main],
            "f_src": f_src[:n_main],
        },
    )


def sample_mixture_task(
    rng: np.random.Generator,
    cfg: MixturePriorConfig,
    bias: BiasConfig,
    d_model: int,
    pool_size: int = 200,
    horizon_range: tuple[int, int] = (10, 20),
    n_targets: int = 100,
    n_context: int = 1,
    noise: float = OBSERVATION_NOISE,
) -> TaskInstance:
    """Draw one task from the reweighted latent-component prior.

    The objective averages the real components (scaled by 1/sqrt(k_real));
    the source reweights a masked superset of real and decoy components with
    Dirichlet weights rescaled by sqrt(|active set|). There is no visibility
    split: the full input is the optimizer input.
    """
    horizon = _sample_horizon(rng, horizon_range)
    _check_feasible(pool_size, horizon, n_context)
    hw = DOMAIN_HALF_WIDTH
    n_main = pool_size + n_targets
    points = rng.uniform(-hw, hw, size=(n_main, d_model))

    k_decoy = int(rng.integers(cfg.k_decoy_range[0], cfg.k_decoy_range[1] + 1))
    k_total = cfg.k_real + k_decoy
    components = np.empty((k_total, n_main))
    for k in range(k_total):
        spec = sample_kernel_spec(rng, d_model)
        components[k] = sample_gp_joint(rng, spec, points)

    y_raw = components[: cfg.k_real].sum(axis=0) / np.sqrt(cfg.k_real)

    mask = np.zeros(k_total, dtype=bool)
    mask[0] = True  # the first real component is always active
    mask[1:] = rng.random(k_total - 1) < cfg.p_src
    active = np.flatnonzero(mask)
    weights = np.zeros(k_total)
    raw = rng.dirichlet(np.full(len(active), cfg.alpha_src))
    weights[active] = np.sqrt(len(active)) * raw

    g = weights @ components
    u_all, record = apply_bias_pipeline(rng, g, points, bias)

    y_all = y_raw + rng.normal(0.0, noise, size=n_main)
    context_idx = rng.choice(pool_size, size=n_context, replace=False)

    return TaskInstance(
        pool_model=points[:pool_size],
        pool_full=points[:pool_size],
        y=y_all[:pool_size],
        u=u_all[:pool_size],
        context_idx=np.sort(context_idx),
        target_x=points[pool_size:n_main],
        target_y=y_all[pool_size:n_main],
        target_u=u_all[pool_size:n_main],
        horizon=horizon,
        noise=noise,
        metadata={
            "prior": "mixture",
            "k_real": cfg.k_real,
            "k_decoy": k_decoy,
            "mask": mask.tolist(),
            "weights": weights.tolist(),
            "bias": record.to_json(),
            "pool_max": float(y_raw[:pool_size].max()),
            "pool_range": float(y_raw[:pool_size].max() - y_raw[:pool_size].min()),
            # per-component values at pool+target points (diagnostics only)
            "components": components,
        },
    )


def sample_task(
    rng: np.random.Generator,
    prior: str,
    d_model: int,
    additive_cfg: AdditivePriorConfig | None = None,
    mixture_cfg: MixturePriorConfig | None = None,
    bias: BiasConfig | None = None,
    pool_size: int = 200,
    horizon_range: tuple[int, int] = (10, 20),
    n_targets: int = 100,
    n_context: int = 1,
    noise: float = OBSERVATION_NOISE,
) -> TaskInstance:
    """Dispatch to the configured prior with shared pool/horizon/noise settings."""
    bias = bias if bias is not None else BiasConfig()
    common = dict(
        d_model=d_model,
        pool_size=pool_size,
        horizon_range=horizon_range,
        n_targets=n_targets,
        n_context=n_context,
        noise=noise,
    )
    if prior == "additive":
        cfg = additive_cfg if additive_cfg is not None else default_additive_config(d_model)
        return sample_additive_task(rng, cfg, bias, **common)
    if prior == "mixture":
        cfg = mixture_cfg if mixture_cfg is not None else MixturePriorConfig()
        return sample_mixture_task(rng, cfg, bias, **common)
    raise ValueError(f"unknown prior {prior!r}")
