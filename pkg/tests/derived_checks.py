"""Oracle-backed checks shared by the module tests and the acceptance suite.

Each check recomputes its expected value from an independent route (closed
forms, explicit linear algebra, Monte Carlo, quadrature, brute force) and
asserts the implementation against it. Registered checks are run, timed, and
reported one by one by the acceptance suite.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm, pearsonr

from ficbo import autodiff as ad
from ficbo.autodiff import Tensor
from ficbo.baselines import acq_ei, acq_ucb, default_gp_kernel, pibo_adjust, PiBoSpec, AcquisitionSpec
from ficbo.bias import (
    BiasConfig,
    apply_bias_pipeline,
    bias_catastrophic,
    bias_gp_additive,
    bias_local,
    bias_noise,
)
from ficbo.benchmarks import (
    branin_high_raw,
    branin_low_raw,
    eval_function,
    marginal_expert_feedback,
    reactor,
    MarginalExpert,
    ReactorParams,
)
from ficbo.episode import discounted_returns, normalize_returns_per_step, run_episode
from ficbo.gp import GpRegressor, jittered_cholesky, sample_gp_joint
from ficbo.kernels import KernelSpec, kernel_eval, kernel_matrix, sample_kernel_spec
from ficbo.network import FeedbackAwareNetwork, ModelConfig
from ficbo.tasks import (
    AdditivePriorConfig,
    build_source_model,
    sample_additive_task,
)
from ficbo.trees import GradientBoostedTrees

REGISTRY: list = []


def check(fn):
    REGISTRY.append(fn)
    return fn


# -- gp_core ----------------------------------------------------------------------


@check
def kernel_lengthscale_bounds_d4():
    # substitute d=4 into the stated U(0.1*sqrt(d), 2.0*sqrt(d)) bounds
    rng = np.random.default_rng(7)
    for _ in range(200):
        spec = sample_kernel_spec(rng, 4)
        assert np.all(spec.lengthscales >= 0.2) and np.all(spec.lengthscales <= 4.0)


@check
def kernel_matern12_closed_form():
    spec = KernelSpec("matern12", np.array([1.0]), 0.7)
    assert np.isclose(kernel_eval(spec, [0.0], [1.0]), 0.7 * np.exp(-1.0), atol=1e-12)


@check
def kernel_rbf_closed_form():
    spec = KernelSpec("rbf", np.array([1.0]), 0.5)
    assert np.isclose(kernel_eval(spec, [0.0], [2.0]), 0.5 * np.exp(-2.0), atol=1e-12)


@check
def gp_prior_variance_monte_carlo():
    # 10,000 draws at one point: empirical variance within 5% of output_scale
    spec = KernelSpec("matern32", np.array([1.0]), 0.6)
    rng = np.random.default_rng(3)
    pt = np.array([[0.3]])
    draws = np.array([sample_gp_joint(rng, spec, pt)[0] for _ in range(10_000)])
    assert abs(np.var(draws) - spec.output_scale) < 0.05 * spec.output_scale


@check
def gp_posterior_direct_formula():
    # brute-force linear algebra oracle: explicit inverse of K + noise + jitter
    rng = np.random.default_rng(0)
    spec = KernelSpec("matern52", np.array([0.8, 1.3]), 0.9)
    X = rng.uniform(-2, 2, size=(3, 2))
    y = rng.normal(size=3)
    noise = 1e-3
    reg = GpRegressor(spec, noise).fit(X, y)
    q = rng.uniform(-2, 2, size=(1, 2))
    K = kernel_matrix(spec, X) + (noise + reg.jitter_) * np.eye(3)
    k_star = kernel_matrix(spec, X, q)
    mean_direct = k_star.T @ np.linalg.inv(K) @ y
    var_direct = spec.output_scale - k_star.T @ np.linalg.inv(K) @ k_star
    mean, std = reg.predict(q, return_std=True)
    assert np.isclose(mean[0], mean_direct[0], atol=1e-9)
    assert np.isclose(std[0] ** 2, var_direct[0, 0], atol=1e-9)


# -- bias_ops ---------------------------------------------------------------------


@check
def noise_clt_and_std():
    rng = np.random.default_rng(11)
    sig = np.zeros(100_000)
    out = bias_noise(rng, sig, 0.2)
    assert abs(np.mean(out - sig)) < 3 * 0.2 / np.sqrt(100_000)
    assert abs(np.std(out - sig) - 0.2) < 0.05 * 0.2


@check
def gp_bias_std_cap():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-5, 5, size=(120, 1))
    sig = np.zeros(120)
    for _ in range(25):
        out = bias_gp_additive(rng, sig, pts, lengthscale=1.0, scale=2.0, max_std=0.3)
        assert np.std(out - sig) <= 0.3 + 1e-6


@check
def gp_bias_smoothness():
    # lag-1 autocorrelation on a sorted grid exceeds 0.5 for a long lengthscale
    rng = np.random.default_rng(6)
    pts = np.linspace(-5, 5, 200)[:, None]
    acs = []
    for _ in range(30):
        b = bias_gp_additive(rng, np.zeros(200), pts, 3.0, 1.0, 1.0)
        bc = b - b.mean()
        acs.append(np.sum(bc[:-1] * bc[1:]) / np.sum(bc * bc))
    assert np.mean(acs) > 0.5


@check
def local_distortion_tail():
    # Gaussian tail: at >= 6 decay lengths the bump is below magnitude * 1e-7
    rng = np.random.default_rng(2)
    pts = np.array([[0.0], [6.5]])
    out = bias_local(rng, np.zeros(2), pts, n_centers=1, magnitude=0.5, decay=1.0)
    bump = np.abs(out)
    far = np.argmin(bump)
    assert bump[far] < 0.5 * 1e-7
    assert np.isclose(bump.max(), 0.5)


@check
def catastrophic_independence():
    rng = np.random.default_rng(4)
    spec = KernelSpec("rbf", np.array([1.0]), 0.5)
    pts = np.random.default_rng(0).uniform(-5, 5, size=(300, 1))
    corrs = []
    for _ in range(200):
        inp = rng.normal(size=300)
        out = bias_catastrophic(rng, inp, pts, spec)
        corrs.append(abs(pearsonr(inp, out)[0]))
    assert np.mean(corrs) < 0.1


@check
def catastrophic_marginal_variance():
    spec = KernelSpec("matern52", np.array([1.5]), 0.4)
    rng = np.random.default_rng(9)
    pts = np.random.default_rng(1).uniform(-5, 5, size=(5, 1))
    draws = np.array(
        [bias_catastrophic(rng, np.zeros(5), pts, spec)[0] for _ in range(4000)]
    )
    assert abs(np.var(draws) - spec.output_scale) < 0.1 * spec.output_scale


@check
def bias_activation_frequencies():
    # Monte Carlo against the configured probabilities (0.05, 0.2, 0.2, 0.2)
    rng = np.random.default_rng(12)
    cfg = BiasConfig()
    pts = np.random.default_rng(0).uniform(-5, 5, size=(4, 1))
    sig = np.zeros(4)
    counts = {"catastrophic": 0, "gp_bias": 0, "local": 0, "shift": 0}
    n = 10_000
    for _ in range(n):
        _, rec = apply_bias_pipeline(rng, sig, pts, cfg)
        for k in counts:
            counts[k] += getattr(rec, k)
    assert abs(counts["catastrophic"] / n - 0.05) < 0.02
    assert abs(counts["gp_bias"] / n - 0.2) < 0.02
    assert abs(counts["local"] / n - 0.2) < 0.02
    assert abs(counts["shift"] / n - 0.2) < 0.02


# -- feedback_priors -----------------------------------------------------------------


@check
def additive_half_weight_combination():
    # objective must equal the normalized combination of the stored components
    cfg = AdditivePriorConfig(
        w_range=(0.5, 0.5), overlap_choices=(0,), source_mode="direct"
    )
    rng = np.random.default_rng(21)
    task = sample_additive_task(
        rng, cfg, BiasConfig.disabled(), d_model=2, pool_size=20,
        horizon_range=(5, 5), n_targets=5, noise=0.0,
    )
    fm = np.asarray(task.metadata["f_model"])[: task.n_pool]
    fs = np.asarray(task.metadata["f_src"])[: task.n_pool]
    expected = (0.5 * fm + 0.5 * fs) / np.sqrt(0.5)
    assert np.allclose(task.y, expected, atol=1e-12)


@check
def source_model_interpolation():
    # dense 1-d source grid with tiny noise: the GP source reproduces the signal
    rng = np.random.default_rng(8)
    grid = np.linspace(-5, 5, 200)[:, None]
    spec = KernelSpec("matern52", np.array([1.2]), 0.8)
    signal = sample_gp_joint(rng, spec, grid)
    reg = build_source_model(rng, (grid, signal), spec, noise=1e-8)
    pred = reg.predict(grid)
    assert np.max(np.abs(pred - signal)) < 1e-3


# -- episode ----------------------------------------------------------------------------


@check
def discounted_returns_direct_sum():
    r = np.array([1.0, 0.0, 1.0])
    out = discounted_returns(r, 0.98)
    assert np.allclose(out, [1.0 + 0.98**2, 0.98, 1.0], atol=1e-12)


@check
def normalize_population_convention():
    out = normalize_returns_per_step(np.array([[0.0], [2.0]]))
    assert np.allclose(out[:, 0], [-1.0, 1.0], atol=1e-6)


@check
def oracle_policy_minimal_regret():
    # brute force over all selection orders of size T on a small pool
    from itertools import permutations

    from ficbo.tasks import TaskInstance

    y = np.array([0.3, 0.9, 0.1, 0.7, 0.5, 0.2, 0.4])
    task = TaskInstance(
        pool_model=np.arange(7.0)[:, None],
        pool_full=np.arange(7.0)[:, None],
        y=y,
        u=y.copy(),
        context_idx=np.array([0]),
        target_x=np.zeros((1, 1)),
        target_y=np.zeros(1),
        target_u=np.zeros(1),
        horizon=3,
        metadata={"pool_max": float(y.max()), "pool_range": float(y.max() - y.min())},
    )

    def oracle(state, view, rng):
        masked = np.where(state.pool_mask, task.y, -np.inf)
        return int(np.argmax(masked))

    traj = run_episode(task, oracle, np.random.default_rng(0))
    regret = np.sum(y.max() - np.array([y[i] for i in traj["selections"]]))
    best = min(
        sum(y.max() - y[list(p)])
        for p in permutations([i for i in range(7) if i != 0], 3)
    )
    assert np.isclose(regret, best, atol=1e-12)


# -- model -------------------------------------------------------------------------------


@check
def gmm_standard_normal_logdensity():
    ld = FeedbackAwareNetwork.gmm_log_density(
        Tensor(np.array([[0.0]])),
        Tensor(np.array([[0.0]])),
        Tensor(np.array([[1.0]])),
        np.array([0.0]),
    )
    assert np.isclose(ld.data[0], -0.5 * np.log(2 * np.pi), atol=1e-12)


@check
def gmm_density_integrates_to_one():
    # quadrature oracle over the mixture support
    rng = np.random.default_rng(3)
    K = 4
    w = rng.dirichlet(np.ones(K))
    mu = rng.normal(size=K)
    sd = rng.uniform(0.2, 1.5, size=K)
    lo = (mu - 10 * sd).min()
    hi = (mu + 10 * sd).max()
    ys = np.linspace(lo, hi, 20_001)
    log_w = Tensor(np.log(np.tile(w, (len(ys), 1))))
    means = Tensor(np.tile(mu, (len(ys), 1)))
    stds = Tensor(np.tile(sd, (len(ys), 1)))
    dens = np.exp(FeedbackAwareNetwork.gmm_log_density(log_w, means, stds, ys).data)
    assert abs(np.trapezoid(dens, ys) - 1.0) < 1e-3


@check
def gmm_moments_match_sampling():
    # Monte Carlo oracle for the mixture mean/variance extraction
    from ficbo.network import GmmPosterior

    rng = np.random.default_rng(5)
    w = rng.dirichlet(np.ones(3))
    mu = np.array([-1.0, 0.5, 2.0])
    sd = np.array([0.3, 1.0, 0.6])
    post = GmmPosterior(weights=w, means=mu, stds=sd)
    mean, var = post.moments()
    comp = rng.choice(3, size=400_000, p=w)
    samples = rng.normal(mu[comp], sd[comp])
    assert abs(mean - samples.mean()) < 0.02 * max(1.0, abs(samples.mean()))
    assert abs(var - samples.var()) < 0.02 * samples.var()


@check
def backbone_target_isolation():
    # with query attention off, removing a query cannot move a target's output
    rng = np.random.default_rng(1)
    cfg = ModelConfig(
        d_in=1, d_embed=8, n_layers=1, n_heads=1, d_ff=16, n_mixture=2,
        query_attends_queries=False,
    )
    net = FeedbackAwareNetwork(cfg, rng=rng)
    hx = rng.normal(size=(2, 1))
    hu, hy = rng.normal(size=2), rng.normal(size=2)

    def target_out(cand_x, cand_u):
        with ad.no_grad():
            base = net.embed_xu(np.vstack([hx, cand_x]), np.concatenate([hu, cand_u]))
            ey = net.embed_y(hy)
            n0 = 2
            N = n0 + len(cand_x)
            ctx = np.zeros((1, N), dtype=bool)
            ctx[:, :n0] = True
            add = ad.concat([ey, Tensor(np.zeros((N - n0, cfg.d_embed)))], axis=0)
            tokens = ad.reshape(ad.add(base, add), (1, N, cfg.d_embed))
            return net.backbone(tokens, ctx).data[0, -1]

    tgt = np.array([[0.5]]), np.array([0.2])
    q = np.array([[1.5]]), np.array([-0.3])
    with_query = target_out(np.vstack([q[0], tgt[0]]), np.concatenate([q[1], tgt[1]]))
    without = target_out(tgt[0], tgt[1])
    assert np.allclose(with_query, without, atol=1e-12)


# -- baselines ------------------------------------------------------------------------------


@check
def ei_at_incumbent_closed_form():
    # z = 0 reduces EI to sigma * phi(0)
    val = acq_ei(np.array([1.0]), np.array([1.0]), 1.0)[0]
    assert np.isclose(val, 1.0 / np.sqrt(2 * np.pi), atol=1e-12)
    assert np.isclose(val, norm.pdf(0.0), atol=1e-12)


@check
def pibo_uniform_feedback_scaling():
    spec = PiBoSpec(AcquisitionSpec("ei"), beta=2.0)
    scores = np.array([0.5, 1.5, 1.0])
    fb = np.zeros(3)
    adj = pibo_adjust(scores, fb, t=0, spec=spec)
    factor = (1.0 / 3.0) ** 2.0
    assert np.allclose(adj, scores * factor, atol=1e-12)
    assert np.argmax(adj) == np.argmax(scores)


@check
def gp_ucb_single_observation_oracle():
    rng = np.random.default_rng(13)
    X = np.array([[0.0, 0.0]])
    y = np.array([0.4])
    cand = rng.uniform(-5, 5, size=(40, 2))
    kernel = default_gp_kernel(2, y)
    reg = GpRegressor(kernel, 1e-4).fit(X, y)
    mean, std = reg.predict(cand, return_std=True)
    direct = acq_ucb(mean, std, 1.0)
    assert np.argmax(direct) == np.argmax(mean + std)


@check
def ei_near_incumbent_is_small():
    # the pool maximum plus tiny noise leaves EI ~ 0 everywhere
    rng = np.random.default_rng(3)
    X = np.array([[0.0]])
    y = np.array([2.0])
    kernel = KernelSpec("matern52", np.array([1.0]), 1e-6)
    reg = GpRegressor(kernel, 1e-8).fit(X, y)
    cand = rng.uniform(-5, 5, size=(30, 1))
    mean, std = reg.predict(cand, return_std=True)
    assert np.all(acq_ei(mean, std, 2.0) <= 1e-3)


@check
def random_selection_frequencies():
    from ficbo.baselines import select_random
    from ficbo.episode import EpisodeState

    rng = np.random.default_rng(17)
    state = EpisodeState(pool_mask=np.ones(4, dtype=bool), horizon=1)
    counts = np.zeros(4)
    n = 10_000
    for _ in range(n):
        counts[select_random(state, rng).index] += 1
    assert np.all(np.abs(counts / n - 0.25) < 0.02)


# -- benchmarks ---------------------------------------------------------------------------------


@check
def ackley_origin_value():
    # substitute the origin: 20 e^0 + e^1 - 20 - e = 0
    assert abs(eval_function("ackley", np.zeros(3))) < 1e-12


@check
def rastrigin_origin_value():
    assert abs(eval_function("rastrigin", np.zeros(2))) < 1e-12


@check
def branin_optimum_value():
    x = np.array([np.pi / 15.0, 2.275 / 15.0])
    assert abs(branin_high_raw(x) - 0.397887) < 1e-5


@check
def branin_low_fidelity_gap_sign():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, size=(100, 2))
    gap = branin_low_raw(x, 0.6) - branin_high_raw(x)
    assert np.all(gap <= 1e-12)


@check
def branin_rank_degradation():
    from scipy.stats import spearmanr

    g = np.linspace(0, 1, 40)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    high = -branin_high_raw(pts)
    rhos = [spearmanr(-branin_low_raw(pts, a), high)[0] for a in (0.0, 0.5, 0.75)]
    assert rhos[0] > rhos[1] > rhos[2]


@check
def reactor_limit_branch():
    equal = ReactorParams(A1=1.0, A2=1.0, Ea1=0.0, Ea2=0.0, A0=1.0)
    near = ReactorParams(A1=1.0, A2=1.0 + 1e-6, Ea1=0.0, Ea2=0.0, A0=1.0)
    y_eq, _ = reactor(1.0, 300.0, equal)
    y_near, _ = reactor(1.0, 300.0, near)
    assert abs(y_eq - np.exp(-1.0)) < 1e-12
    assert abs(y_eq - y_near) < 1e-5


@check
def marginal_expert_separable_oracle():
    # additively separable objective: feedback differences track the expert part
    def f(x):
        return np.sin(1.3 * x[:, 1]) + 0.2 * x[:, 0] ** 2

    domain = np.array([[-5.0, 5.0], [-5.0, 5.0]])
    rng = np.random.default_rng(2)
    expert = MarginalExpert(f, domain, expert_dims=(1,), d=2, rng=rng, n_draws=2000)
    pts = np.array([[0.0, -2.0], [3.0, 1.0], [-1.0, 4.0]])
    fb = expert.feedback(pts)
    h = np.sin(1.3 * pts[:, 1])
    mc_std = 0.2 * 25 / np.sqrt(12) / np.sqrt(2000)  # std of the x0^2 average
    diffs = (fb - fb[0]) - (h - h[0])
    assert np.all(np.abs(diffs) < 3 * mc_std * 2)


@check
def tree_expert_step_function_fit():
    # depth-3 ensemble shrinks the residual geometrically: RMSE just below 0.1
    x = np.linspace(-1, 1, 200)[:, None]
    y = (x[:, 0] > 0).astype(float)
    model = GradientBoostedTrees(n_estimators=10, max_depth=3, learning_rate=0.15).fit(x, y)
    rmse = np.sqrt(np.mean((model.predict(x) - y) ** 2))
    assert rmse < 0.1


# -- harness -----------------------------------------------------------------------------------


@check
def cumulative_regret_hand_case():
    from ficbo.harness import cumulative_regret

    out = cumulative_regret([0.0, 1.0], pool_max=1.0, normalizer=1.0)
    assert np.allclose(out, [1.0, 1.0], atol=1e-12)


@check
def aggregate_means_hand_case():
    from ficbo.harness import RunRecord, aggregate_rows

    recs = []
    trajs = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]
    for s, tr in enumerate(trajs):
        recs.append(
            RunRecord(
                seed=s, strategy="x", task_name="t", task_hash="h",
                cum_regret=tr, best_found=tr,
            )
        )
    rows = aggregate_rows(recs, np.random.default_rng(0))
    by_step = {r["step"]: r for r in rows}
    assert np.isclose(by_step[0]["cum_regret_mean"], 3.0)
    assert np.isclose(by_step[1]["cum_regret_mean"], 4.0)


def run_all(report=print) -> float:
    """Run every registered check; returns total runtime in seconds."""
    import time

    start = time.perf_counter()
    for fn in REGISTRY:
        t0 = time.perf_counter()
        fn()
        report(f"PASS {fn.__name__} ({time.perf_counter() - t0:.2f}s)")
    return time.perf_counter() - start
