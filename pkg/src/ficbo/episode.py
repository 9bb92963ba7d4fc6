"""Pool-based optimization episodes: state transitions, rewards, returns.

At each step a policy picks one remaining candidate; the environment reveals
its stored noisy objective value, pays the improvement over the incumbent as
reward, and removes the candidate from the pool. Feedback is time-independent
within an episode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tasks import TaskInstance


@dataclass
class SelectionResult:
    """A policy's decision at one step; log_prob/scores are optional."""

    index: int
    log_prob: float | None = None
    scores: np.ndarray | None = None


@dataclass
class EpisodeState:
    """Augmented history plus remaining-pool bookkeeping for one episode."""

    history_x: list = field(default_factory=list)
    history_u: list = field(default_factory=list)
    history_y: list = field(default_factory=list)
    pool_mask: np.ndarray = None
    step: int = 0
    horizon: int = 0
    best_so_far: float = -np.inf

    @property
    def n_observed(self) -> int:
        return len(self.history_y)


def init_state(task: TaskInstance) -> EpisodeState:
    """Start an episode: context points enter the history, never the pool."""
    mask = np.ones(task.n_pool, dtype=bool)
    mask[task.context_idx] = False
    ctx = task.context_idx
    return EpisodeState(
        history_x=[task.pool_model[i].copy() for i in ctx],
        history_u=[float(task.u[i]) for i in ctx],
        history_y=[float(task.y[i]) for i in ctx],
        pool_mask=mask,
        step=0,
        horizon=task.horizon,
        best_so_far=float(np.max(task.y[ctx])),
    )


def step(
    state: EpisodeState, task: TaskInstance, selected_index: int
) -> tuple[EpisodeState, float]:
    """Consume one pool candidate; reward is the improvement over the incumbent."""
    if state.step >= state.horizon:
        raise RuntimeError("episode horizon exhausted")
    if not state.pool_mask[selected_index]:
        raise ValueError(f"candidate {selected_index} is not in the remaining pool")
    y = float(task.y[selected_index])
    reward = max(y - state.best_so_far, 0.0)
    state.history_x.append(task.pool_model[selected_index].copy())
    state.history_u.append(float(task.u[selected_index]))
    state.history_y.append(y)
    state.pool_mask[selected_index] = False
    state.best_so_far = max(state.best_so_far, y)
    state.step += 1
    return state, reward


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """R_t = sum_{k>=t} gamma^(k-t) r_k."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def normalize_returns_per_step(returns: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Center and scale returns per timestep across the batch (population std).

    NaN entries (padding for shorter episodes) are ignored in the statistics
    and preserved in the output.
    """
    returns = np.asarray(returns, dtype=np.float64)
    if returns.ndim != 2 or returns.shape[0] < 1:
        raise ValueError("returns must be a (batch, T) matrix")
    valid = ~np.isnan(returns)
    out = np.full_like(returns, np.nan)
    for t in range(returns.shape[1]):
        col = returns[valid[:, t], t]
        if len(col) == 0:
            continue
        mu = col.mean()
        sigma = col.std()
        out[valid[:, t], t] = (col - mu) / (sigma + eps)
    return out


def run_episode(
    task: TaskInstance,
    policy,
    rng: np.random.Generator,
) -> dict:
    """Roll a policy through a full episode.

    The policy is called as policy(state, view, rng) and returns either a pool
    index or a SelectionResult. Returns a trajectory dict with selections,
    rewards, per-step log-probs/scores when provided, and best-so-far values.
    """
    view = task.optimizer_view()
    state = init_state(task)
    selections: list[int] = []
    rewards: list[float] = []
    log_probs: list[float | None] = []
    scores: list[np.ndarray | None] = []
    best: list[float] = []
    for _ in range(task.horizon):
        decision = policy(state, view, rng)
        if not isinstance(decision, SelectionResult):
            decision = SelectionResult(index=int(decision))
        idx = decision.index
        if not state.pool_mask[idx]:
            raise ValueError(f"policy selected masked candidate {idx}")
        state, reward = step(state, task, idx)
        selections.append(idx)
        rewards.append(reward)
        log_probs.append(decision.log_prob)
        scores.append(decision.scores)
        best.append(state.best_so_far)
    return {
        "selections": selections,
        "rewards": rewards,
        "log_probs": log_probs,
        "scores": scores,
        "best_so_far": best,
    }
