"""Estimator-style wrapper around the in-context optimizer.

`InContextOptimizer` follows the fit/predict/get_params convention: `fit`
pretrains the network on the configured synthetic task prior, `predict`
returns predictive mixture moments for a task's candidates, and `policy`
yields a selection callable for the episode runner.
"""

from __future__ import annotations

import inspect

import numpy as np

from .baselines import make_model_policy
from .bias import BiasConfig
from .network import FeedbackAwareNetwork, ModelConfig, load_checkpoint, save_checkpoint
from .tasks import TaskInstance, sample_task
from .training import TrainingConfig, TrainResult, train


def make_prior_sampler(
    prior: str,
    d: int,
    pool_size: int = 50,
    horizon_range: tuple[int, int] = (10, 10),
    n_targets: int = 20,
    n_context: int = 1,
    bias: BiasConfig | None = None,
    additive_cfg=None,
    mixture_cfg=None,
):
    """A task sampler closure suitable for the training loop.

    `sampler(rng)` draws a full-pool task. `sampler(rng, pool_size=k)` reduces
    the selectable pool to roughly k candidates (warmup); the special value
    "horizon" shrinks it to the task's own horizon. One spare candidate is
    always kept so the pool stays feasible for the full episode.
    """

    def sampler(rng: np.random.Generator, pool_size=None):
        h_range = horizon_range
        if pool_size is None:
            n_pool = pool_size_default
        else:
            if pool_size == "horizon":
                h = int(rng.integers(horizon_range[0], horizon_range[1] + 1))
                h_range = (h, h)
                pool_size = h
            n_pool = int(pool_size) + n_context + 1
        n_pool = max(n_pool, h_range[1] + n_context + 1)
        return sample_task(
            rng,
            prior,
            d_model=d,
            additive_cfg=additive_cfg,
            mixture_cfg=mixture_cfg,
            bias=bias,
            pool_size=n_pool,
            horizon_range=h_range,
            n_targets=n_targets,
            n_context=n_context,
        )

    pool_size_default = pool_size
    return sampler


class InContextOptimizer:
    """Pretrained pool-selection policy with a Gaussian-mixture prediction head."""

    def __init__(
        self,
        d: int = 1,
        prior: str = "additive",
        d_embed: int = 32,
        n_layers: int = 3,
        n_heads: int = 4,
        d_ff: int = 128,
        n_mixture: int = 10,
        feedback_mode: str = "concat",
        query_attends_queries: bool = True,
        use_time_token: bool = False,
        lr: float = 1e-3,
        weight_decay: float = 1e-7,
        batch_size: int = 32,
        n_iterations: int = 3000,
        warmup_iterations: int = 600,
        gamma: float = 0.98,
        lambda_pol: float = 1.0,
        grad_clip_norm: float = 1.0,
        pool_size: int = 50,
        horizon_range: tuple[int, int] = (10, 10),
        n_targets: int = 20,
        n_context: int = 1,
        seed: int = 0,
    ):
        args = inspect.signature(type(self).__init__).parameters
        for name in args:
            if name != "self":
                setattr(self, name, locals()[name])
        self.network_: FeedbackAwareNetwork | None = None
        self.train_result_: TrainResult | None = None

    # -- sklearn-style parameter plumbing ---------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "InContextOptimizer":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for InContextOptimizer")
            setattr(self, key, value)
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_in=self.d,
            d_embed=self.d_embed,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            n_mixture=self.n_mixture,
            feedback_mode=self.feedback_mode,
            query_attends_queries=self.query_attends_queries,
            use_time_token=self.use_time_token,
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            n_iterations=self.n_iterations,
            warmup_iterations=self.warmup_iterations,
            gamma=self.gamma,
            lambda_pol=self.lambda_pol,
            grad_clip_norm=self.grad_clip_norm,
        )

    # -- training -----------------------------------------------------------------

    def fit(
        self,
        task_sampler=None,
        bias: BiasConfig | None = None,
        metrics_path=None,
        checkpoint_path=None,
        progress: bool = False,
    ) -> "InContextOptimizer":
        """Pretrain on the configured prior (or a custom task sampler)."""
        rng = np.random.default_rng(self.seed)
        if task_sampler is None:
            task_sampler = make_prior_sampler(
                self.prior,
                self.d,
                pool_size=self.pool_size,
                horizon_range=self.horizon_range,
                n_targets=self.n_targets,
                n_context=self.n_context,
                bias=bias,
            )
        self.network_ = FeedbackAwareNetwork(self.model_config(), rng=rng)
        self.train_result_ = train(
            task_sampler,
            self.network_,
            self.training_config(),
            rng,
            metrics_path=metrics_path,
            checkpoint_path=checkpoint_path,
            progress=progress,
        )
        return self

    def _require_fitted(self) -> FeedbackAwareNetwork:
        if self.network_ is None:
            raise RuntimeError("InContextOptimizer is not fitted; call fit() or load()")
        return self.network_

    # -- deployment -----------------------------------------------------------------

    def predict(self, task: TaskInstance, return_var: bool = False):
        """Predictive mixture moments over the task's pool, conditioned on its
        initial context."""
        net = self._require_fitted()
        view = task.optimizer_view()
        ctx = view.context_idx
        mask = np.ones(task.n_pool, dtype=bool)
        mask[ctx] = False
        cand = np.flatnonzero(mask)
        _, gmm = net.step_forward(
            view.pool[ctx],
            view.feedback[ctx],
            task.y[ctx],
            view.pool[cand],
            view.feedback[cand],
            step=0,
            horizon=task.horizon,
        )
        mean = np.full(task.n_pool, np.nan)
        var = np.full(task.n_pool, np.nan)
        m, v = gmm.moments()
        mean[cand] = m
        var[cand] = v
        return (mean, var) if return_var else mean

    def policy(self, stochastic: bool = False, standardize: bool = False):
        """A selection policy callable for `episode.run_episode`."""
        return make_model_policy(
            self._require_fitted(), stochastic=stochastic, standardize=standardize
        )

    # -- persistence -------------------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(path, self._require_fitted())

    def load(self, path) -> "InContextOptimizer":
        self.network_ = load_checkpoint(path)
        cfg = self.network_.config
        self.set_params(
            d=cfg.d_in,
            d_embed=cfg.d_embed,
            n_layers=cfg.n_layers,
            n_heads=cfg.n_heads,
            d_ff=cfg.d_ff,
            n_mixture=cfg.n_mixture,
            feedback_mode=cfg.feedback_mode,
            query_attends_queries=cfg.query_attends_queries,
            use_time_token=cfg.use_time_token,
        )
        return self
