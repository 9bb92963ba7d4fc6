"""Experiment orchestration: seeded strategy comparisons, metrics, outputs.

Each seed produces one task replica shared by every strategy; records capture
per-step selections, best-found and normalized cumulative-regret trajectories,
and the top-5 policy/feedback agreement. Aggregates use seeded percentile
bootstrap intervals.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import STRATEGY_NAMES, build_strategy
from .benchmarks import build_benchmark_pool, make_benchmark
from .episode import run_episode
from .network import FeedbackAwareNetwork, load_checkpoint
from .tasks import TaskInstance, sample_task

BOOTSTRAP_RESAMPLES = 1000
PROFILE_BINS = 20


@dataclass
class RunRecord:
    """One (seed, strategy) episode with its derived trajectories."""

    seed: int
    strategy: str
    task_name: str
    task_hash: str
    selections: list[int] = field(default_factory=list)
    y_values: list[float] = field(default_factory=list)
    u_values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    best_found: list[float] = field(default_factory=list)
    cum_regret: list[float] = field(default_factory=list)
    agreement5: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    error: str | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        return cls(**d)


def record_canonical_bytes(record: RunRecord) -> bytes:
    """Deterministic serialization used for reproducibility checks.

    Wall-clock time is the one volatile field and is excluded.
    """
    d = record.to_json()
    d.pop("wall_clock", None)
    return json.dumps(d, sort_keys=True).encode("utf-8")


def task_hash(task: TaskInstance) -> str:
    return hashlib.sha256(
        json.dumps(task.to_json(), sort_keys=True).encode("utf-8")
    ).hexdigest()


def cumulative_regret(y_values, pool_max: float, normalizer: float) -> np.ndarray:
    """Running sum of (pool_max - y_t), scaled by the pool range."""
    y = np.asarray(y_values, dtype=np.float64)
    if normalizer == 0:
        normalizer = 1.0
    return np.cumsum(pool_max - y) / normalizer


def agreement_at_5(policy_scores, feedback, mask) -> float:
    """Overlap fraction between the policy's and the feedback's top-5
    candidates over the unmasked pool (k shrinks with the pool)."""
    mask = np.asarray(mask, dtype=bool)
    avail = np.flatnonzero(mask)
    if len(avail) == 0:
        raise ValueError("empty pool")
    k = min(5, len(avail))
    scores = np.asarray(policy_scores, dtype=np.float64)[avail]
    fb = np.asarray(feedback, dtype=np.float64)[avail]
    top_policy = set(avail[np.argsort(-scores, kind="stable")[:k]])
    top_feedback = set(avail[np.argsort(-fb, kind="stable")[:k]])
    return len(top_policy & top_feedback) / k


def feedback_profile(y, u, n_bins: int = PROFILE_BINS) -> np.ndarray:
    """Signed and absolute feedback-error means over feedback-sorted bins.

    Points are sorted by feedback (stable, index as tiebreak) and split into
    n_bins nearly equal bins (the first n % n_bins bins hold one extra
    point). Output is the signed-mean block followed by the mean-absolute
    block, 2 * n_bins entries.
    """
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if y.shape != u.shape or y.ndim != 1:
        raise ValueError("y and u must be equal-length vectors")
    n_bins = min(n_bins, len(y))
    d = u - y
    order = np.argsort(u, kind="stable")
    chunks = np.array_split(d[order], n_bins)
    signed = np.array([c.mean() for c in chunks])
    absolute = np.array([np.abs(c).mean() for c in chunks])
    return np.concatenate([signed, absolute])


def bootstrap_ci(
    values: np.ndarray,
    rng: np.random.Generator,
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    level: float = 0.95,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and percentile bootstrap CI over axis 0 (seeds)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    idx = rng.integers(n, size=(n_resamples, n))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo = np.quantile(means, alpha, axis=0)
    hi = np.quantile(means, 1.0 - alpha, axis=0)
    return values.mean(axis=0), lo, hi


def bootstrap_greater(
    a: np.ndarray,
    b: np.ndarray,
    rng: np.random.Generator,
    n_resamples: int = BOOTSTRAP_RESAMPLES,
) -> float:
    """Paired bootstrap: fraction of resamples where mean(a - b) > 0."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    idx = rng.integers(len(diff), size=(n_resamples, len(diff)))
    return float(np.mean(diff[idx].mean(axis=1) > 0.0))


# -- experiment configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything a comparison run needs; unset fields keep their defaults
    and are echoed back into the emitted metadata."""

    strategies: tuple[str, ...] = ("random",)
    n_seeds: int = 10
    master_seed: int = 0
    horizon: int = 30
    pool_size: int = 300
    n_context: int = 1
    n_targets: int = 1
    # task source: a benchmark name, or a prior kind with a dimension
    benchmark: str | None = "ackley"
    benchmark_dim: int | None = 1
    feedback_kind: str = "marginal_expert"
    expert_dims: tuple[int, ...] | None = None
    fidelity_gap: float = 0.0
    prior: str | None = None
    prior_dim: int = 1
    checkpoints: dict = field(default_factory=dict)
    standardize: str = "auto"  # auto | on | off

    def __post_init__(self):
        for s in self.strategies:
            if s not in STRATEGY_NAMES:
                raise ValueError(f"unknown strategy {s!r}")
        if self.standardize not in ("auto", "on", "off"):
            raise ValueError("standardize must be auto|on|off")

    def resolved(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return d


def _make_task(cfg: ExperimentConfig, rng: np.random.Generator) -> TaskInstance:
    if cfg.prior is not None:
        return sample_task(
            rng,
            cfg.prior,
            d_model=cfg.prior_dim,
            pool_size=cfg.pool_size,
            horizon_range=(cfg.horizon, cfg.horizon),
            n_targets=cfg.n_targets,
            n_context=cfg.n_context,
        )
    bench = make_benchmark(
        cfg.benchmark,
        d=cfg.benchmark_dim,
        feedback_kind=cfg.feedback_kind,
        expert_dims=cfg.expert_dims,
        a=cfg.fidelity_gap,
    )
    return build_benchmark_pool(
        rng,
        bench,
        pool_size=cfg.pool_size,
        n_context=cfg.n_context,
        horizon=cfg.horizon,
        n_targets=cfg.n_targets,
    )


def _regret_reference(task: TaskInstance) -> tuple[float, float]:
    meta = task.metadata
    if "pool_max" in meta:
        return float(meta["pool_max"]), float(meta["pool_range"])
    return float(task.y.max()), float(task.y.max() - task.y.min())


def run_strategy_on_task(
    strategy: str,
    task: TaskInstance,
    seed: int,
    rng: np.random.Generator,
    models: dict[str, FeedbackAwareNetwork] | None = None,
    standardize: bool = False,
    thash: str | None = None,
) -> RunRecord:
    """Run one strategy on one task replica and derive its trajectories."""
    record = RunRecord(
        seed=seed,
        strategy=strategy,
        task_name=task.name,
        task_hash=thash if thash is not None else task_hash(task),
    )
    start = time.perf_counter()
    try:
        policy = build_strategy(strategy, models=models, standardize=standardize)
        view = task.optimizer_view()
        mask = np.ones(task.n_pool, dtype=bool)
        mask[task.context_idx] = False
        traj = run_episode(task, policy, rng)
        pool_max, pool_range = _regret_reference(task)
        record.selections = [int(i) for i in traj["selections"]]
        record.y_values = [float(task.y[i]) for i in traj["selections"]]
        record.u_values = [float(task.u[i]) for i in traj["selections"]]
        record.rewards = [float(r) for r in traj["rewards"]]
        record.best_found = [float(b) for b in traj["best_so_far"]]
        record.cum_regret = cumulative_regret(
            record.y_values, pool_max, pool_range
        ).tolist()
        agreement = []
        for i, scores in enumerate(traj["scores"]):
            if scores is None:
                agreement.append(float("nan"))
            else:
                agreement.append(agreement_at_5(scores, view.feedback, mask))
            mask[traj["selections"][i]] = False
        record.agreement5 = agreement
    except Exception as exc:  # a failing strategy must not sink the run
        record.error = f"{type(exc).__name__}: {exc}"
    record.wall_clock = time.perf_counter() - start
    return record


def run_experiment(
    cfg: ExperimentConfig,
    models: dict[str, FeedbackAwareNetwork] | None = None,
) -> list[RunRecord]:
    """For each seed: one shared task replica, every strategy on a copy."""
    models = dict(models or {})
    for key, path in cfg.checkpoints.items():
        if key not in models:
            models[key] = load_checkpoint(path)
    if cfg.standardize == "auto":
        standardize = cfg.prior is None  # benchmarks live on foreign scales
    else:
        standardize = cfg.standardize == "on"
    records = []
    for seed in range(cfg.n_seeds):
        task_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.master_seed, seed, 0])
        )
        task = _make_task(cfg, task_rng)
        thash = task_hash(task)
        for k, strategy in enumerate(cfg.strategies):
            strat_rng = np.random.default_rng(
                np.random.SeedSequence([cfg.master_seed, seed, 1 + k])
            )
            records.append(
                run_strategy_on_task(
                    strategy, task, seed, strat_rng, models, standardize, thash
                )
            )
    return records


# -- outputs ---------------------------------------------------------------------------------


def aggregate_rows(records: list[RunRecord], rng: np.random.Generator) -> list[dict]:
    """Per (strategy, step): bootstrap mean and CI of regret and best-found."""
    rows = []
    strategies = sorted({r.strategy for r in records})
    for strategy in strategies:
        runs = [r for r in records if r.strategy == strategy and r.error is None]
        if not runs:
            continue
        horizon = min(len(r.cum_regret) for r in runs)
        regret = np.array([r.cum_regret[:horizon] for r in runs])
        best = np.array([r.best_found[:horizon] for r in runs])
        r_mean, r_lo, r_hi = bootstrap_ci(regret, rng)
        b_mean, b_lo, b_hi = bootstrap_ci(best, rng)
        for t in range(horizon):
            rows.append(
                {
                    "strategy": strategy,
                    "step": t,
                    "cum_regret_mean": r_mean[t],
                    "cum_regret_lo": r_lo[t],
                    "cum_regret_hi": r_hi[t],
                    "best_found_mean": b_mean[t],
                    "best_found_lo": b_lo[t],
                    "best_found_hi": b_hi[t],
                }
            )
    return rows


def emit_results(
    records: list[RunRecord],
    out_dir,
    tasks: list[TaskInstance] | None = None,
    config: dict | None = None,
) -> dict:
    """Write per-run JSON, the aggregate CSV, and per-task profile vectors.

    Returns the paths written. Profile vectors need the task pools, so they
    are emitted only when tasks are provided.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"runs": [], "aggregate": None, "profiles": None, "config": None}
    for rec in records:
        p = out / f"run_{rec.strategy}_seed{rec.seed}.json"
        p.write_text(json.dumps(rec.to_json(), indent=1))
        paths["runs"].append(str(p))

    rng = np.random.default_rng(0)  # seeded bootstrap: byte-identical reruns
    rows = aggregate_rows(records, rng)
    agg = out / "aggregate.csv"
    with open(agg, "w") as fh:
        cols = [
            "strategy",
            "step",
            "cum_regret_mean",
            "cum_regret_lo",
            "cum_regret_hi",
            "best_found_mean",
            "best_found_lo",
            "best_found_hi",
        ]
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if c != "strategy" else row[c] for c in cols) + "\n")
    paths["aggregate"] = str(agg)

    if tasks is not None:
        prof = out / "profiles.csv"
        with open(prof, "w") as fh:
            header = ["task_index", "task_name"] + [
                f"signed_{b}" for b in range(PROFILE_BINS)
            ] + [f"abs_{b}" for b in range(PROFILE_BINS)]
            fh.write(",".join(header) + "\n")
            for i, task in enumerate(tasks):
                vec = feedback_profile(task.y, task.u)
                fh.write(
                    ",".join([str(i), task.name] + [repr(v) for v in vec]) + "\n"
                )
        paths["profiles"] = str(prof)

    if config is not None:
        cfgp = out / "run_metadata.json"
        cfgp.write_text(json.dumps(config, indent=1, sort_keys=True))
        paths["config"] = str(cfgp)
    return paths
