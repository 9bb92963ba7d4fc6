"""Command-line interface: generate tasks, train models, evaluate, diagnose."""

from __future__ import annotations

import argparse
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import MODEL_STRATEGIES
from .bias import BiasConfig
from .estimator import InContextOptimizer
from .harness import (
    ExperimentConfig,
    RunRecord,
    agreement_at_5,
    emit_results,
    feedback_profile,
    run_experiment,
    _make_task,
)
from .tasks import sample_task


def _parse_checkpoints(entries: list[str] | None) -> dict:
    """--checkpoint [strategy-key=]path, repeatable; bare paths are the default."""
    out: dict = {}
    for entry in entries or []:
        if "=" in entry:
            key, path = entry.split("=", 1)
            out[key] = path
        else:
            out["default"] = entry
    return out


def cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    tasks = []
    for _ in range(args.n_tasks):
        task = sample_task(
            rng,
            args.prior,
            d_model=args.dim,
            pool_size=args.pool_size,
            horizon_range=(args.horizon_min, args.horizon_max),
            n_targets=args.n_targets,
        )
        tasks.append(task.to_json())
    Path(args.out).write_text(json.dumps(tasks))
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def _load_json_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def cmd_train(args) -> int:
    cfg = _load_json_config(args.config)
    bias_cfg = BiasConfig(**cfg.pop("bias", {}))
    est_kwargs = dict(d=args.dim, prior=args.prior, seed=args.seed)
    est_kwargs.update(cfg)
    est = InContextOptimizer(**est_kwargs)
    metrics = args.metrics or str(Path(args.out).with_suffix(".metrics.csv"))
    est.fit(
        bias=bias_cfg,
        metrics_path=metrics,
        checkpoint_path=args.out,
        progress=not args.quiet,
    )
    meta = {
        "command": "train",
        "params": est.get_params(),
        "bias": asdict(bias_cfg),
        "metrics": metrics,
        "checkpoint": args.out,
    }
    meta["params"]["horizon_range"] = list(est.horizon_range)
    Path(args.out).with_suffix(".meta.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True)
    )
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    expert_dims = (
        tuple(int(i) for i in args.expert_dims.split(",")) if args.expert_dims else None
    )
    cfg = ExperimentConfig(
        strategies=strategies,
        n_seeds=args.seeds,
        master_seed=args.seed,
        horizon=args.horizon,
        pool_size=args.pool_size,
        n_context=args.n_context,
        n_targets=args.n_targets,
        benchmark=args.benchmark,
        benchmark_dim=args.dim,
        feedback_kind=args.feedback,
        expert_dims=expert_dims,
        fidelity_gap=args.a,
        prior=args.prior,
        prior_dim=args.dim or 1,
        checkpoints=_parse_checkpoints(args.checkpoint),
        standardize=args.standardize,
    )
    missing = [
        s
        for s in strategies
        if s in MODEL_STRATEGIES
        and MODEL_STRATEGIES[s] not in cfg.checkpoints
        and "default" not in cfg.checkpoints
    ]
    if missing:
        raise SystemExit(
            f"strategies {missing} need --checkpoint (key: "
            f"{[MODEL_STRATEGIES[s] for s in missing]})"
        )
    records = run_experiment(cfg)
    tasks = [
        _make_task(cfg, np.random.default_rng(np.random.SeedSequence([cfg.master_seed, s, 0])))
        for s in range(cfg.n_seeds)
    ]
    paths = emit_results(records, args.out, tasks=tasks, config=cfg.resolved())
    n_err = sum(1 for r in records if r.error is not None)
    print(f"wrote {len(records)} records ({n_err} failed) to {args.out}")
    print(f"aggregate: {paths['aggregate']}")
    return 0


def cmd_diagnose(args) -> int:
    records = []
    for p in sorted(Path(args.records).glob("run_*.json")):
        records.append(RunRecord.from_json(json.loads(p.read_text())))
    if not records:
        raise SystemExit(f"no run_*.json records under {args.records}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agg = out / "agreement.csv"
    with open(agg, "w") as fh:
        fh.write("strategy,seed,step,agreement5\n")
        for rec in records:
            for t, a in enumerate(rec.agreement5):
                fh.write(f"{rec.strategy},{rec.seed},{t},{a!r}\n")
    print(f"wrote {agg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ficbo",
        description="Feedback-informed in-context black-box optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="emit synthetic task batches as JSON")
    g.add_argument("--prior", choices=("additive", "mixture"), default="additive")
    g.add_argument("--dim", type=int, default=1)
    g.add_argument("--n-tasks", type=int, default=10)
    g.add_argument("--pool-size", type=int, default=200)
    g.add_argument("--horizon-min", type=int, default=10)
    g.add_argument("--horizon-max", type=int, default=20)
    g.add_argument("--n-targets", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="pretrain an optimizer on a task prior")
    t.add_argument("--prior", choices=("additive", "mixture"), default="additive")
    t.add_argument("--dim", type=int, default=1)
    t.add_argument("--config", help="JSON file overriding estimator/bias settings")
    t.add_argument("--metrics", help="metrics CSV path (default: alongside checkpoint)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compare strategies on a benchmark or prior")
    e.add_argument("--strategies", required=True, help="comma-separated strategy names")
    e.add_argument("--benchmark", default=None, help="benchmark function name")
    e.add_argument("--prior", choices=("additive", "mixture"), default=None)
    e.add_argument("--dim", type=int, default=None)
    e.add_argument(
        "--feedback",
        default="marginal_expert",
        choices=("marginal_expert", "tree_expert", "low_fidelity", "conversion_proxy"),
    )
    e.add_argument("--expert-dims", default=None, help="comma-separated dims")
    e.add_argument("--a", type=float, default=0.0, help="branin fidelity gap")
    e.add_argument("--seeds", type=int, default=100)
    e.add_argument("--seed", type=int, default=0, help="master seed")
    e.add_argument("--horizon", type=int, default=30)
    e.add_argument("--pool-size", type=int, default=300)
    e.add_argument("--n-context", type=int, default=1)
    e.add_argument("--n-targets", type=int, default=1)
    e.add_argument(
        "--checkpoint",
        action="append",
        help="model checkpoint, repeatable; 'key=path' binds a specific strategy",
    )
    e.add_argument("--standardize", choices=("auto", "on", "off"), default="auto")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("diagnose", help="agreement/profile tables from records")
    d.add_argument("--records", required=True, help="directory of run_*.json files")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
