"""Non-amortized selection strategies and deployment-mode policies.

All strategies share the episode runner: a policy is a callable
(state, view, rng) -> SelectionResult whose index respects the pool mask.
Exact-GP acquisition baselines, feedback-softmax reweighting, greedy and
random selection, and the semi-amortized mode that pairs the model's mixture
head with a classical acquisition all live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .episode import EpisodeState, SelectionResult
from .gp import GpRegressor
from .kernels import KernelSpec
from .network import FeedbackAwareNetwork
from .tasks import OptimizerView

SCORE_CLIP = 1e-12  # floor on base acquisition scores under power-weighting
GP_BASELINE_NOISE = 1e-4


@dataclass
class AcquisitionSpec:
    kind: str = "ei"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ei", "ucb"):
            raise ValueError(f"unknown acquisition {self.kind!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")


@dataclass
class PiBoSpec:
    base: AcquisitionSpec
    beta: float = 2.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def acq_ucb(mean, std, kappa: float = 1.0) -> np.ndarray:
    return np.asarray(mean) + kappa * np.asarray(std)


def acq_ei(mean, std, y_plus: float) -> np.ndarray:
    """Expected improvement over y_plus; at std=0 it degenerates to
    max(mean - y_plus, 0)."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    out = np.maximum(mean - y_plus, 0.0)
    pos = std > 0
    if np.any(pos):
        z = (mean[pos] - y_plus) / std[pos]
        out = out.copy()
        out[pos] = (mean[pos] - y_plus) * norm.cdf(z) + std[pos] * norm.pdf(z)
    return out


def acq_scores(spec: AcquisitionSpec, mean, std, y_plus: float) -> np.ndarray:
    if spec.kind == "ucb":
        return acq_ucb(mean, std, spec.kappa)
    return acq_ei(mean, std, y_plus)


def pibo_adjust(
    scores: np.ndarray, feedback: np.ndarray, t: int, spec: PiBoSpec
) -> np.ndarray:
    """Reweight acquisition scores by a softmax of the feedback raised to a
    decaying exponent beta/(t+1); base scores are floored at a tiny positive
    value before the product."""
    scores = np.asarray(scores, dtype=np.float64)
    f = np.asarray(feedback, dtype=np.float64)
    e = np.exp(f - f.max())
    u_tilde = e / e.sum()
    exponent = spec.beta / (t + 1)
    if exponent == 0.0:
        return scores.copy()
    return np.maximum(scores, SCORE_CLIP) * u_tilde**exponent


def _argmax_lowest(scores: np.ndarray, mask: np.ndarray) -> int:
    """Argmax over unmasked entries; ties break to the lowest pool index."""
    masked = np.where(mask, scores, -np.inf)
    return int(np.argmax(masked))


def default_gp_kernel(d: int, y_observed: np.ndarray) -> KernelSpec:
    """Fixed Matern-5/2 kernel for the exact-GP baselines.

    Output scale tracks the sample variance of the observations and falls
    back to 1.0 while fewer than two (or identical) values are available.
    """
    var = float(np.var(y_observed)) if len(y_observed) > 1 else 0.0
    output_scale = var if var > 1e-12 else 1.0
    ls = np.full(d, np.sqrt(d) / 2.0)
    return KernelSpec("matern52", ls, output_scale, isotropic=True)


def gp_posterior_on_pool(
    state: EpisodeState, view: OptimizerView
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Condition the fixed-kernel GP on the history; returns (cand_idx, mean, std)."""
    X = np.vstack(state.history_x)
    y = np.asarray(state.history_y, dtype=np.float64)
    kernel = default_gp_kernel(X.shape[1], y)
    reg = GpRegressor(kernel, GP_BASELINE_NOISE).fit(X, y)
    cand = np.flatnonzero(state.pool_mask)
    mean, std = reg.predict(view.pool[cand], return_std=True)
    return cand, mean, std


def select_gp_acq(
    state: EpisodeState,
    view: OptimizerView,
    acq: AcquisitionSpec,
    pibo: PiBoSpec | None = None,
) -> SelectionResult:
    """Exact-GP acquisition argmax, optionally feedback-reweighted."""
    cand, mean, std = gp_posterior_on_pool(state, view)
    scores = acq_scores(acq, mean, std, state.best_so_far)
    if pibo is not None:
        scores = pibo_adjust(scores, view.feedback[cand], state.step, pibo)
    full = np.full(len(view.feedback), -np.inf)
    full[cand] = scores
    idx = _argmax_lowest(full, state.pool_mask)
    return SelectionResult(index=idx, scores=full)


def select_feedback_greedy(state: EpisodeState, view: OptimizerView) -> SelectionResult:
    if not state.pool_mask.any():
        raise ValueError("empty pool")
    full = np.where(state.pool_mask, view.feedback, -np.inf)
    return SelectionResult(index=int(np.argmax(full)), scores=full)


def select_random(state: EpisodeState, rng: np.random.Generator) -> SelectionResult:
    avail = np.flatnonzero(state.pool_mask)
    if len(avail) == 0:
        raise ValueError("empty pool")
    return SelectionResult(index=int(rng.choice(avail)))


@dataclass
class FeedbackScaler:
    """Shared affine map for objective and feedback values at deployment.

    Benchmark objectives live on arbitrary scales; standardizing both y and u
    with the pool-feedback statistics brings them into the pretraining range
    while preserving their relative geometry. Identity when disabled.
    """

    shift: float = 0.0
    scale: float = 1.0

    @classmethod
    def from_view(cls, view: OptimizerView, enabled: bool) -> "FeedbackScaler":
        if not enabled:
            return cls()
        shift = float(np.mean(view.feedback))
        scale = float(np.std(view.feedback))
        if scale < 1e-12:
            scale = 1.0
        return cls(shift, scale)

    def __call__(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.shift) / self.scale


def _model_inputs(state: EpisodeState, view: OptimizerView, scaler: FeedbackScaler):
    cand = np.flatnonzero(state.pool_mask)
    return (
        np.vstack(state.history_x),
        scaler(state.history_u),
        scaler(state.history_y),
        view.pool[cand],
        scaler(view.feedback[cand]),
        cand,
    )


def select_semi_amortized(
    network: FeedbackAwareNetwork,
    state: EpisodeState,
    view: OptimizerView,
    acq: AcquisitionSpec,
    scaler: FeedbackScaler | None = None,
) -> SelectionResult:
    """Score the model's mixture moments with a classical acquisition."""
    scaler = scaler or FeedbackScaler()
    hx, hu, hy, cx, cu, cand = _model_inputs(state, view, scaler)
    _, gmm = network.step_forward(hx, hu, hy, cx, cu, state.step, state.horizon)
    mean, var = gmm.moments()
    y_plus = float(scaler(np.array([state.best_so_far]))[0])
    scores = acq_scores(acq, mean, np.sqrt(np.maximum(var, 0.0)), y_plus)
    full = np.full(len(view.feedback), -np.inf)
    full[cand] = scores
    idx = _argmax_lowest(full, state.pool_mask)
    return SelectionResult(index=idx, scores=full)


# -- policy factories -------------------------------------------------------------


def make_model_policy(
    network: FeedbackAwareNetwork, stochastic: bool = False, standardize: bool = False
):
    """End-to-end amortized deployment: the policy head picks the candidate.

    Evaluation uses the argmax; training-style rollouts sample instead.
    """
    scaler_box: dict = {}

    def policy(state: EpisodeState, view: OptimizerView, rng: np.random.Generator):
        if "scaler" not in scaler_box:
            scaler_box["scaler"] = FeedbackScaler.from_view(view, standardize)
        scaler = scaler_box["scaler"]
        hx, hu, hy, cx, cu, cand = _model_inputs(state, view, scaler)
        dist, _ = network.step_forward(hx, hu, hy, cx, cu, state.step, state.horizon)
        local = dist.sample(rng) if stochastic else dist.argmax()
        full = np.full(len(view.feedback), -np.inf)
        full[cand] = dist.probs
        return SelectionResult(
            index=int(cand[local]),
            log_prob=float(dist.log_probs[local]),
            scores=full,
        )

    return policy


def make_semi_policy(
    network: FeedbackAwareNetwork, acq: AcquisitionSpec, standardize: bool = False
):
    scaler_box: dict = {}

    def policy(state, view, rng):
        if "scaler" not in scaler_box:
            scaler_box["scaler"] = FeedbackScaler.from_view(view, standardize)
        return select_semi_amortized(network, state, view, acq, scaler_box["scaler"])

    return policy


def make_gp_policy(acq: AcquisitionSpec, pibo: PiBoSpec | None = None):
    def policy(state, view, rng):
        return select_gp_acq(state, view, acq, pibo)

    return policy


def make_feedback_policy():
    return lambda state, view, rng: select_feedback_greedy(state, view)


def make_random_policy():
    return lambda state, view, rng: select_random(state, rng)


STRATEGY_NAMES = (
    "ficbo",
    "gp_icbo",
    "gp_icbo_feedback_feature",
    "pibo_ei",
    "pibo_ucb",
    "gp_ei",
    "gp_ucb",
    "semi_ei",
    "semi_ucb",
    "feedback",
    "random",
)

# which checkpoint a model-backed strategy consumes
MODEL_STRATEGIES = {
    "ficbo": "ficbo",
    "gp_icbo": "gp_icbo",
    "gp_icbo_feedback_feature": "gp_icbo_feedback_feature",
    "semi_ei": "ficbo",
    "semi_ucb": "ficbo",
}


def build_strategy(
    name: str,
    models: dict[str, FeedbackAwareNetwork] | None = None,
    standardize: bool = False,
):
    """Construct the named selection policy.

    Model-backed strategies look up their network in `models` under the key
    from MODEL_STRATEGIES; a bare "default" entry is used as fallback.
    """
    if name not in STRATEGY_NAMES:
        raise ValueError(f"unknown strategy {name!r}; choose from {STRATEGY_NAMES}")
    models = models or {}
    if name in MODEL_STRATEGIES:
        key = MODEL_STRATEGIES[name]
        net = models.get(key) or models.get("default")
        if net is None:
            raise ValueError(f"strategy {name!r} needs a model checkpoint ({key})")
        if name.startswith("semi_"):
            return make_semi_policy(
                net, AcquisitionSpec(kind=name.split("_")[1]), standardize
            )
        return make_model_policy(net, stochastic=False, standardize=standardize)
    if name.startswith("pibo_"):
        kind = name.split("_")[1]
        return make_gp_policy(AcquisitionSpec(kind=kind), PiBoSpec(AcquisitionSpec(kind=kind)))
    if name.startswith("gp_"):
        return make_gp_policy(AcquisitionSpec(kind=name.split("_")[1]))
    if name == "feedback":
        return make_feedback_policy()
    return make_random_policy()
