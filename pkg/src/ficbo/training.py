"""Joint pretraining of the prediction and policy heads.

Warmup iterations train the predictive loss alone with random selections from
a reduced pool; afterwards trajectories are sampled from the policy and the
REINFORCE term joins in, weighted by lambda_pol. Returns are discounted,
then normalized per timestep across the batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .episode import discounted_returns, normalize_returns_per_step
from .network import EpisodeTensors, FeedbackAwareNetwork, save_checkpoint
from .tasks import TaskInstance


@dataclass
class TrainingConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-7
    batch_size: int = 32  # paper-scale value is 200
    n_iterations: int = 3000
    warmup_iterations: int = 600
    gamma: float = 0.98
    lambda_pol: float = 1.0
    grad_clip_norm: float = 1.0
    logprob_clamp: float = -10.0
    warmup_pool_size: int | None = None  # defaults to the sampled horizon
    lr_t0: int = 1000
    lr_t_mult: int = 2
    lr_min: float = 0.0

    def __post_init__(self):
        if self.warmup_iterations > self.n_iterations:
            raise ValueError("warmup_iterations cannot exceed n_iterations")
        for name in ("lr", "grad_clip_norm", "lambda_pol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")


def cosine_restart_lr(
    iteration: int,
    base_lr: float,
    t0: int = 1000,
    t_mult: int = 2,
    min_lr: float = 0.0,
) -> float:
    """Cosine annealing with warm restarts, stepped per iteration."""
    cycle = t0
    i = iteration
    while i >= cycle:
        i -= cycle
        cycle *= t_mult
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + np.cos(np.pi * i / cycle))


class AdamW:
    """Adaptive moment estimation with decoupled weight decay."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            p.data = p.data - lr * self.weight_decay * p.data
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data = p.data - lr * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + self.eps
            )


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Rescale all gradients to a global l2 norm of at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- rollout collection --------------------------------------------------------


def episode_arrays(task: TaskInstance) -> dict:
    """Split a task into context rows and selectable pool rows."""
    pool_rows = np.setdiff1d(np.arange(task.n_pool), task.context_idx)
    return {
        "ctx_x": task.pool_model[task.context_idx],
        "ctx_u": task.u[task.context_idx],
        "ctx_y": task.y[task.context_idx],
        "pool_rows": pool_rows,
        "pool_x": task.pool_model[pool_rows],
        "pool_u": task.u[pool_rows],
        "pool_y": task.y[pool_rows],
    }


def collect_rollout(
    network: FeedbackAwareNetwork,
    task: TaskInstance,
    rng: np.random.Generator,
    sample_policy: bool,
) -> tuple[EpisodeTensors, np.ndarray]:
    """Play one episode (policy-sampled or uniform) without building a graph."""
    arr = episode_arrays(task)
    Np = len(arr["pool_rows"])
    T = task.horizon
    remaining = np.ones(Np, dtype=bool)
    hist_x = [arr["ctx_x"]]
    hist_u = [arr["ctx_u"]]
    hist_y = [arr["ctx_y"]]
    best = float(arr["ctx_y"].max())
    selections = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    for t in range(T):
        avail = np.flatnonzero(remaining)
        if sample_policy:
            policy, _ = network.step_forward(
                np.vstack(hist_x),
                np.concatenate(hist_u),
                np.concatenate(hist_y),
                arr["pool_x"][avail],
                arr["pool_u"][avail],
                step=t,
                horizon=T,
            )
            pick = avail[policy.sample(rng)]
        else:
            pick = avail[rng.integers(len(avail))]
        y = float(arr["pool_y"][pick])
        rewards[t] = max(y - best, 0.0)
        best = max(best, y)
        selections[t] = pick
        remaining[pick] = False
        hist_x.append(arr["pool_x"][pick : pick + 1])
        hist_u.append(arr["pool_u"][pick : pick + 1])
        hist_y.append(arr["pool_y"][pick : pick + 1])
    ep = EpisodeTensors(
        ctx_x=arr["ctx_x"],
        ctx_u=arr["ctx_u"],
        ctx_y=arr["ctx_y"],
        pool_x=arr["pool_x"],
        pool_u=arr["pool_u"],
        pool_y=arr["pool_y"],
        tgt_x=task.target_x,
        tgt_u=task.target_u,
        tgt_y=task.target_y,
        selections=selections,
        horizon=T,
    )
    return ep, rewards


# -- losses ---------------------------------------------------------------------


def loss_pred(network: FeedbackAwareNetwork, episodes: list[EpisodeTensors]) -> Tensor:
    """Step-wise prediction NLL averaged over steps then tasks."""
    terms = [network.episode_forward(ep)["pred_nll"] for ep in episodes]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


def policy_term(
    chosen_log_probs: Tensor, normalized_returns: np.ndarray, clamp: float = -10.0
) -> Tensor:
    """-sum_t clamp(log pi_t) * R~_t for one trajectory."""
    lp = ad.clamp_min(chosen_log_probs, clamp)
    return ad.mul(ad.reduce_sum(ad.mul(lp, Tensor(normalized_returns))), -1.0)


def loss_pol(
    network: FeedbackAwareNetwork,
    episodes: list[EpisodeTensors],
    normalized_returns: np.ndarray,
    clamp: float = -10.0,
) -> Tensor:
    """REINFORCE loss with batch-normalized discounted returns."""
    terms = []
    for i, ep in enumerate(episodes):
        out = network.episode_forward(ep)
        terms.append(policy_term(out["chosen_log_probs"], normalized_returns[i, : ep.horizon], clamp))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))


# -- the training loop --------------------------------------------------------------


@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    final_loss_pred: float = np.nan
    final_loss_pol: float = np.nan


def train(
    task_sampler,
    network: FeedbackAwareNetwork,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    metrics_path=None,
    checkpoint_path=None,
    log_every: int = 50,
    progress: bool = False,
) -> TrainResult:
    """Run the full pretraining schedule.

    task_sampler(rng, pool_size=None) must return a TaskInstance; pool_size
    overrides the pool during warmup. Raises RuntimeError on non-finite loss.
    """
    opt = AdamW(
        network.parameters(),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
    )
    result = TrainResult()
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss_pred", "loss_pol", "lr", "mean_reward"])
    try:
        for i in range(1, cfg.n_iterations + 1):
            lr_now = cosine_restart_lr(
                i - 1, cfg.lr, cfg.lr_t0, cfg.lr_t_mult, cfg.lr_min
            )
            warmup = i <= cfg.warmup_iterations
            rollouts = []
            for _ in range(cfg.batch_size):
                if warmup:
                    wps = cfg.warmup_pool_size
                    task = task_sampler(rng, pool_size="horizon" if wps is None else wps)
                else:
                    task = task_sampler(rng)
                rollouts.append(collect_rollout(network, task, rng, sample_policy=not warmup))

            if not warmup:
                t_max = max(ep.horizon for ep, _ in rollouts)
                returns = np.full((cfg.batch_size, t_max), np.nan)
                for b, (ep, rew) in enumerate(rollouts):
                    returns[b, : ep.horizon] = discounted_returns(rew, cfg.gamma)
                norm_returns = normalize_returns_per_step(returns)

            network.zero_grad()
            sum_pred = 0.0
            sum_pol = 0.0
            for b, (ep, rew) in enumerate(rollouts):
                out = network.episode_forward(ep)
                term = out["pred_nll"]
                sum_pred += term.item()
                if not warmup:
                    pol = policy_term(
                        out["chosen_log_probs"],
                        norm_returns[b, : ep.horizon],
                        cfg.logprob_clamp,
                    )
                    sum_pol += pol.item()
                    term = ad.add(term, ad.mul(pol, cfg.lambda_pol))
                ad.mul(term, 1.0 / cfg.batch_size).backward()

            mean_pred = sum_pred / cfg.batch_size
            mean_pol = sum_pol / cfg.batch_size
            if not np.isfinite(mean_pred) or not np.isfinite(mean_pol):
                raise RuntimeError(
                    f"non-finite loss at iteration {i}: "
                    f"loss_pred={mean_pred}, loss_pol={mean_pol}"
                )
            clip_gradients(network.parameters(), cfg.grad_clip_norm)
            opt.step(lr_now)

            mean_reward = float(np.mean([rew.sum() for _, rew in rollouts]))
            if i % log_every == 0 or i == 1 or i == cfg.n_iterations:
                row = {
                    "iteration": i,
                    "loss_pred": mean_pred,
                    "loss_pol": mean_pol,
                    "lr": lr_now,
                    "mean_reward": mean_reward,
                    "mode": "random" if warmup else "policy",
                }
                result.metrics.append(row)
                if writer is not None:
                    writer.writerow([i, mean_pred, mean_pol, lr_now, mean_reward])
                    fh.flush()
                if progress:
                    print(
                        f"iter {i:6d} pred {mean_pred:+.4f} pol {mean_pol:+.4f} "
                        f"lr {lr_now:.2e} reward {mean_reward:.4f}"
                    )
            result.final_loss_pred = mean_pred
            result.final_loss_pol = mean_pol
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, network)
    return result
