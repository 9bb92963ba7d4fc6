"""Closed-form evaluation tasks and their expert-feedback generators.

Analytic test functions in maximization form (standard minimization forms
negated; Gramacy is used as-is), a marginal Monte Carlo expert, a shallow
boosted-tree expert, the correlation-adjustable two-fidelity Branin pair, and
first-order sequential-reaction kinetics. Pools are sampled uniformly in the
normalized space [-s, s]^d with s = 5 and mapped to each function's natural
domain; the optimizer always sees the normalized coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tasks import TaskInstance
from .trees import GradientBoostedTrees
from .validation import check_matrix

DESIGN_SCALE = 5.0
BENCHMARK_NOISE = 0.01
GAS_CONSTANT = 8.314462618  # J / (mol K)


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = check_matrix(x, "x")
    if pts.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got {pts.shape[1]}")
    return pts, single


def _sphere(x):
    return -np.sum(x * x, axis=1)


def _ackley(x):
    d = x.shape[1]
    return (
        20.0 * np.exp(-0.2 * np.sqrt(np.sum(x * x, axis=1) / d))
        + np.exp(np.sum(np.cos(2.0 * np.pi * x), axis=1) / d)
        - 20.0
        - np.e
    )


def _rastrigin(x):
    d = x.shape[1]
    return -(10.0 * d + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x), axis=1))


def _levy(x):
    w = 1.0 + (x - 1.0) / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum(
        (w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2),
        axis=1,
    )
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return -(head + mid + tail)


def _schwefel(x):
    d = x.shape[1]
    return -(418.9829 * d - np.sum(x * np.sin(np.sqrt(np.abs(x))), axis=1))


def _gramacy(x):
    return x[:, 0] * np.exp(-x[:, 0] ** 2 - x[:, 1] ** 2)


def _rosenbrock(x):
    return -np.sum(
        100.0 * (x[:, 1:] - x[:, :-1] ** 2) ** 2 + (1.0 - x[:, :-1]) ** 2, axis=1
    )


_H3_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H3_A = np.array([[3, 10, 30], [0.1, 10, 35], [3, 10, 30], [0.1, 10, 35]], dtype=float)
_H3_P = 1e-4 * np.array(
    [[3689, 1170, 2673], [4699, 4387, 7470], [1091, 8732, 5547], [381, 5743, 8828]],
    dtype=float,
)


def _hartmann3(x):
    inner = np.sum(_H3_A[None] * (x[:, None, :] - _H3_P[None]) ** 2, axis=2)
    return np.sum(_H3_ALPHA[None] * np.exp(-inner), axis=1)


# name -> (callable on (n,d) natural-domain points, per-dim bounds, fixed dim or None)
_FUNCTIONS: dict[str, tuple] = {
    "sphere": (_sphere, (-5.12, 5.12), None),
    "ackley": (_ackley, (-5.0, 5.0), None),
    "rastrigin": (_rastrigin, (-5.12, 5.12), None),
    "levy": (_levy, (-10.0, 10.0), None),
    "schwefel": (_schwefel, (-500.0, 500.0), None),
    "gramacy": (_gramacy, (-2.0, 6.0), 2),
    "rosenbrock": (_rosenbrock, (-5.0, 10.0), 2),
    "hartmann3": (_hartmann3, (0.0, 1.0), 3),
}

FUNCTION_NAMES = tuple(_FUNCTIONS)


def function_domain(name: str, d: int | None = None) -> np.ndarray:
    """(d, 2) bound box in the function's natural coordinates."""
    if name not in _FUNCTIONS:
        raise ValueError(f"unknown benchmark function {name!r}")
    _, bounds, fixed = _FUNCTIONS[name]
    if fixed is not None:
        if d is not None and d != fixed:
            raise ValueError(f"{name} is fixed to d={fixed}")
        d = fixed
    if d is None:
        raise ValueError(f"{name} needs an explicit dimension")
    return np.tile(np.asarray(bounds), (d, 1))


def eval_function(name: str, x) -> np.ndarray | float:
    """Maximization-form value(s) of a registered function at natural-domain x."""
    if name not in _FUNCTIONS:
        raise ValueError(f"unknown benchmark function {name!r}")
    func, bounds, fixed = _FUNCTIONS[name]
    d = fixed if fixed is not None else np.atleast_2d(x).shape[-1]
    pts, single = _as_points(x, d)
    tol = 1e-9 * max(abs(bounds[0]), abs(bounds[1]), 1.0)
    if np.any(pts < bounds[0] - tol) or np.any(pts > bounds[1] + tol):
        raise ValueError(f"points outside the domain of {name}")
    vals = func(pts)
    return float(vals[0]) if single else vals


def to_natural(x_norm: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """Map normalized [-s, s]^d coordinates onto the natural domain box."""
    x_norm = np.asarray(x_norm, dtype=np.float64)
    lo, hi = domain[:, 0], domain[:, 1]
    return lo + (x_norm + DESIGN_SCALE) / (2.0 * DESIGN_SCALE) * (hi - lo)


# -- expert feedback ---------------------------------------------------------------


class MarginalExpert:
    """Monte Carlo marginal of the objective over dimensions the expert
    cannot see.

    The L draws for the hidden dimensions are fixed at construction, so
    feedback is a deterministic function of the expert coordinates within a
    task replica.
    """

    def __init__(
        self,
        objective,
        domain: np.ndarray,
        expert_dims: tuple[int, ...],
        d: int,
        rng: np.random.Generator,
        n_draws: int = 2000,
    ):
        self.objective = objective
        self.domain = domain
        self.expert_dims = tuple(expert_dims)
        self.hidden_dims = tuple(i for i in range(d) if i not in self.expert_dims)
        self.d = d
        if not self.expert_dims:
            raise ValueError("expert must observe at least one dimension")
        self.draws = rng.uniform(
            -DESIGN_SCALE, DESIGN_SCALE, size=(n_draws, len(self.hidden_dims))
        )

    def feedback(self, x_norm: np.ndarray) -> np.ndarray:
        """Feedback at normalized points; hidden coordinates are ignored."""
        x_norm = np.atleast_2d(np.asarray(x_norm, dtype=np.float64))
        n = len(x_norm)
        if not self.hidden_dims:  # expert sees everything: feedback is exact
            return np.asarray(self.objective(to_natural(x_norm, self.domain)))
        L = len(self.draws)
        full = np.empty((n, L, self.d))
        full[:, :, list(self.expert_dims)] = x_norm[:, None, list(self.expert_dims)]
        full[:, :, list(self.hidden_dims)] = self.draws[None, :, :]
        vals = self.objective(to_natural(full.reshape(n * L, self.d), self.domain))
        return vals.reshape(n, L).mean(axis=1)


def marginal_expert_feedback(
    name: str,
    x_norm: np.ndarray,
    expert_dims: tuple[int, ...],
    rng: np.random.Generator,
    n_draws: int = 2000,
    d: int | None = None,
) -> np.ndarray:
    """One-shot marginal feedback for a registered function (normalized input)."""
    x_norm = np.atleast_2d(np.asarray(x_norm, dtype=np.float64))
    d = d if d is not None else x_norm.shape[1]
    domain = function_domain(name, d)
    expert = MarginalExpert(
        lambda pts: np.asarray(eval_function(name, pts)), domain, expert_dims, d, rng, n_draws
    )
    return expert.feedback(x_norm)


class TreeExpert:
    """Data-driven, informationally limited expert.

    A shallow boosted-tree ensemble is fitted once on 50 uniformly sampled
    points plus the initial context, restricted to the expert-visible
    dimensions; its predictions serve as feedback everywhere.
    """

    N_EXPERT_POINTS = 50

    def __init__(
        self,
        objective,
        domain: np.ndarray,
        expert_dims: tuple[int, ...],
        d: int,
        rng: np.random.Generator,
        context_x_norm: np.ndarray,
        context_y: np.ndarray,
    ):
        self.expert_dims = list(expert_dims)
        pts = rng.uniform(-DESIGN_SCALE, DESIGN_SCALE, size=(self.N_EXPERT_POINTS, d))
        vals = np.asarray(objective(to_natural(pts, domain)))
        X = np.vstack([pts[:, self.expert_dims], np.atleast_2d(context_x_norm)[:, self.expert_dims]])
        y = np.concatenate([vals, np.asarray(context_y, dtype=np.float64)])
        self.model = GradientBoostedTrees(
            n_estimators=10, max_depth=3, learning_rate=0.15
        ).fit(X, y)

    def feedback(self, x_norm: np.ndarray) -> np.ndarray:
        x_norm = np.atleast_2d(np.asarray(x_norm, dtype=np.float64))
        return self.model.predict(x_norm[:, self.expert_dims])


# -- two-fidelity Branin ---------------------------------------------------------------


def _branin_core(xp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    term = xp[:, 1] - 5.1 / (4.0 * np.pi**2) * xp[:, 0] ** 2 + 5.0 / np.pi * xp[:, 0] - 6.0
    high = term**2 + 10.0 * (1.0 - 1.0 / (8.0 * np.pi)) * np.cos(xp[:, 0]) + 10.0
    return high, term


def branin_high_raw(x) -> np.ndarray | float:
    """Standard Branin (minimization form) with x' = 15 x on [0, 1]^2."""
    pts, single = _as_points(x, 2)
    high, _ = _branin_core(15.0 * pts)
    return float(high[0]) if single else high


def branin_low_raw(x, a: float) -> np.ndarray | float:
    """Correlation-adjustable low fidelity: the squared term is suppressed
    with strength a + 0.5 (minimization form)."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must be in [0, 1]")
    pts, single = _as_points(x, 2)
    high, term = _branin_core(15.0 * pts)
    low = high - (a + 0.5) * term**2
    return float(low[0]) if single else low


def branin_mf(x, fidelity: str = "high", a: float = 0.0) -> np.ndarray | float:
    """Maximization-form Branin at the requested fidelity."""
    if fidelity == "high":
        return -branin_high_raw(x)
    if fidelity == "low":
        return -branin_low_raw(x, a)
    raise ValueError(f"unknown fidelity {fidelity!r}")


# -- sequential reaction kinetics --------------------------------------------------------


@dataclass(frozen=True)
class ReactorParams:
    """Arrhenius constants for A -> B -> C; defaults give an interior yield
    optimum that conflicts with maximizing conversion on the default box."""

    A1: float = 1e6  # 1/s
    A2: float = 1e7
    Ea1: float = 50e3  # J/mol
    Ea2: float = 60e3
    A0: float = 1.0


REACTOR_DOMAIN = np.array([[0.1, 10.0], [300.0, 400.0]])  # (tau [s], T [K])


def reactor(tau, T_kelvin, params: ReactorParams = ReactorParams()):
    """Intermediate yield and reactant conversion at residence time tau and
    temperature T. Near k1 = k2 the yield uses the analytic limit."""
    tau = np.asarray(tau, dtype=np.float64)
    T = np.asarray(T_kelvin, dtype=np.float64)
    if np.any(tau < 0) or np.any(T <= 0):
        raise ValueError("tau must be >= 0 and T > 0")
    k1 = params.A1 * np.exp(-params.Ea1 / (GAS_CONSTANT * T))
    k2 = params.A2 * np.exp(-params.Ea2 / (GAS_CONSTANT * T))
    near = np.abs(k2 - k1) <= 1e-8 * np.maximum(k1, k2)
    denom = np.where(near, 1.0, k2 - k1)
    yield_b = params.A0 * k1 / denom * (np.exp(-k1 * tau) - np.exp(-k2 * tau))
    limit = params.A0 * k1 * tau * np.exp(-k1 * tau)
    yield_b = np.where(near, limit, yield_b)
    conversion = 1.0 - np.exp(-k1 * tau)
    if yield_b.ndim == 0:
        return float(yield_b), float(conversion)
    return yield_b, conversion


# -- task assembly --------------------------------------------------------------------------


@dataclass
class BenchmarkTask:
    """A closed-form objective plus its feedback generator."""

    name: str
    d: int
    domain: np.ndarray
    objective: object  # callable (n, d) natural -> (n,) maximization form
    feedback_kind: str
    expert_dims: tuple[int, ...] = ()
    noise: float = BENCHMARK_NOISE
    fidelity_gap: float = 0.0  # branin discrepancy a
    model_dims: tuple[int, ...] | None = None  # optimizer-visible slice; None = all
    extra: dict = field(default_factory=dict)


def make_benchmark(
    name: str,
    d: int | None = None,
    feedback_kind: str = "marginal_expert",
    expert_dims: tuple[int, ...] | None = None,
    a: float = 0.0,
    noise: float = BENCHMARK_NOISE,
    model_dims: tuple[int, ...] | None = None,
) -> BenchmarkTask:
    """Build a benchmark description by name.

    `branin` pairs the high-fidelity objective with its low-fidelity variant
    as feedback; `reactor` uses conversion as the proxy for intermediate
    yield. All other names are registry functions with a marginal or tree
    expert observing `expert_dims` (default: the last input dimension).
    """
    if name == "branin":
        return BenchmarkTask(
            name=f"branin_a{a:g}",
            d=2,
            domain=np.array([[0.0, 1.0], [0.0, 1.0]]),
            objective=lambda x: -branin_high_raw(x),
            feedback_kind="low_fidelity",
            noise=noise,
            fidelity_gap=a,
            model_dims=model_dims,
        )
    if name == "reactor":
        return BenchmarkTask(
            name="reactor",
            d=2,
            domain=REACTOR_DOMAIN.copy(),
            objective=lambda x: reactor(x[:, 0], x[:, 1])[0],
            feedback_kind="conversion_proxy",
            noise=noise,
            model_dims=model_dims,
        )
    domain = function_domain(name, d)
    d = domain.shape[0]
    if feedback_kind not in ("marginal_expert", "tree_expert"):
        raise ValueError(f"{name} supports marginal_expert or tree_expert feedback")
    if expert_dims is None:
        expert_dims = (d - 1,)  # the expert observes the last input dimension
    return BenchmarkTask(
        name=name,
        d=d,
        domain=domain,
        objective=lambda x, _n=name: np.asarray(eval_function(_n, x)),
        feedback_kind=feedback_kind,
        expert_dims=tuple(expert_dims),
        noise=noise,
        model_dims=model_dims,
    )


def build_benchmark_pool(
    rng: np.random.Generator,
    bench: BenchmarkTask,
    pool_size: int = 300,
    n_context: int = 1,
    horizon: int = 30,
    n_targets: int = 1,
) -> TaskInstance:
    """Sample one seeded task replica consumable by every strategy.

    Within a replica the pool, context, observation noise, and feedback are
    fixed, so strategies compared under the same seed see identical tasks.
    """
    n_main = pool_size + n_targets
    x_norm = rng.uniform(-DESIGN_SCALE, DESIGN_SCALE, size=(n_main, bench.d))
    x_nat = to_natural(x_norm, bench.domain)
    y_clean = np.asarray(bench.objective(x_nat), dtype=np.float64)
    y = y_clean + rng.normal(0.0, bench.noise, size=n_main)
    context_idx = np.sort(rng.choice(pool_size, size=n_context, replace=False))

    if bench.feedback_kind == "marginal_expert":
        expert = MarginalExpert(bench.objective, bench.domain, bench.expert_dims, bench.d, rng)
        u = expert.feedback(x_norm)
    elif bench.feedback_kind == "tree_expert":
        expert = TreeExpert(
            bench.objective,
            bench.domain,
            bench.expert_dims,
            bench.d,
            rng,
            context_x_norm=x_norm[context_idx],
            context_y=y[context_idx],
        )
        u = expert.feedback(x_norm)
    elif bench.feedback_kind == "low_fidelity":
        u = -branin_low_raw(x_nat, bench.fidelity_gap)
    elif bench.feedback_kind == "conversion_proxy":
        u = reactor(x_nat[:, 0], x_nat[:, 1])[1]
    else:
        raise ValueError(f"unknown feedback kind {bench.feedback_kind!r}")

    model_dims = list(bench.model_dims) if bench.model_dims is not None else list(range(bench.d))
    pool_clean = y_clean[:pool_size]
    return TaskInstance(
        pool_model=x_norm[:pool_size, model_dims],
        pool_full=x_nat[:pool_size],
        y=y[:pool_size],
        u=np.asarray(u[:pool_size], dtype=np.float64),
        context_idx=context_idx,
        target_x=x_norm[pool_size:, model_dims],
        target_y=y[pool_size:],
        target_u=np.asarray(u[pool_size:], dtype=np.float64),
        horizon=horizon,
        noise=bench.noise,
        name=bench.name,
        metadata={
            "benchmark": bench.name,
            "feedback_kind": bench.feedback_kind,
            "expert_dims": list(bench.expert_dims),
            "fidelity_gap": bench.fidelity_gap,
            "pool_max": float(pool_clean.max()),
            "pool_range": float(pool_clean.max() - pool_clean.min()),
        },
    )
