"""The feedback-aware in-context optimizer network.

Every candidate is embedded from its location and feedback value; evaluated
points additionally receive an embedding of their observed outcome. A masked
attention backbone contextualizes the tokens, a policy head turns remaining
candidates into a categorical selection distribution, and a mixture head
produces a Gaussian-mixture predictive density per point.

The differentiable core lives in `autodiff`; this module only assembles it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FEEDBACK_MODES = ("concat", "add", "disabled", "as_feature")
STD_FLOOR = 1e-4
CHECKPOINT_MAGIC = b"FICBOCKPT1\n"
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelConfig:
    d_in: int = 1
    d_embed: int = 32
    n_layers: int = 3
    n_heads: int = 4
    d_ff: int = 128
    n_mixture: int = 10
    dropout: float = 0.0
    feedback_mode: str = "concat"
    query_attends_queries: bool = True
    use_time_token: bool = False

    def __post_init__(self):
        if self.d_embed % self.n_heads != 0:
            raise ValueError("d_embed must be divisible by n_heads")
        if self.feedback_mode not in FEEDBACK_MODES:
            raise ValueError(f"unknown feedback_mode {self.feedback_mode!r}")
        if self.feedback_mode == "concat" and self.d_embed % 2 != 0:
            raise ValueError("concat mode needs an even d_embed")
        if self.n_mixture < 1:
            raise ValueError("n_mixture must be >= 1")
        if self.dropout != 0.0:
            raise ValueError("dropout is fixed at 0.0")


@dataclass
class GmmPosterior:
    """Per-point mixture parameters; arrays are (..., K)."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if not np.allclose(self.weights.sum(axis=-1), 1.0, atol=1e-6):
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.stds < STD_FLOOR - 1e-12):
            raise ValueError("stds fall below the floor")

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mixture mean and variance per point."""
        mean = np.sum(self.weights * self.means, axis=-1)
        second = np.sum(self.weights * (self.stds**2 + self.means**2), axis=-1)
        return mean, second - mean**2

    def log_density(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)[..., None]
        z = (y - self.means) / self.stds
        comp = -0.5 * z * z - np.log(self.stds) - 0.5 * LOG_2PI
        comp = comp + np.log(self.weights)
        m = comp.max(axis=-1)
        return m + np.log(np.sum(np.exp(comp - m[..., None]), axis=-1))


@dataclass
class PolicyDistribution:
    """Categorical over candidates; masked entries have probability zero."""

    probs: np.ndarray
    log_probs: np.ndarray

    def __post_init__(self):
        if not np.isclose(self.probs.sum(), 1.0, atol=1e-6):
            raise ValueError("probabilities must sum to 1")

    def argmax(self) -> int:
        return int(np.argmax(self.probs))  # ties break to the lowest index

    def sample(self, rng: np.random.Generator) -> int:
        p = self.probs / self.probs.sum()
        return int(rng.choice(len(p), p=p))


@dataclass
class EpisodeTensors:
    """Constant arrays describing one collected episode (teacher-forced)."""

    ctx_x: np.ndarray
    ctx_u: np.ndarray
    ctx_y: np.ndarray
    pool_x: np.ndarray
    pool_u: np.ndarray
    pool_y: np.ndarray
    tgt_x: np.ndarray
    tgt_u: np.ndarray
    tgt_y: np.ndarray
    selections: np.ndarray  # (T,) indices into the pool rows
    horizon: int = 0

    def __post_init__(self):
        self.selections = np.asarray(self.selections, dtype=np.int64)
        if self.horizon == 0:
            self.horizon = len(self.selections)


def _init_linear(rng: np.random.Generator, d_in: int, d_out: int):
    bound = 1.0 / np.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_in, d_out))
    b = np.zeros(d_out)
    return w, b


class FeedbackAwareNetwork:
    """Token embedders, masked attention backbone, policy and mixture heads."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | int = 0):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        self.config = config
        self.params: dict[str, Tensor] = {}
        d = config.d_embed
        self._build(rng)
        self.d_head = d // config.n_heads

    # -- parameters -----------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        return t

    def _add_linear(self, rng, name: str, d_in: int, d_out: int):
        w, b = _init_linear(rng, d_in, d_out)
        return self._add(f"{name}.w", w), self._add(f"{name}.b", b)

    def _build(self, rng):
        cfg = self.config
        d = cfg.d_embed
        mode = cfg.feedback_mode
        if mode == "concat":
            ex_out, ex_in, has_u = d // 2, cfg.d_in, True
        elif mode == "add":
            ex_out, ex_in, has_u = d, cfg.d_in, True
        elif mode == "disabled":
            ex_out, ex_in, has_u = d, cfg.d_in, False
        else:  # as_feature: feedback is just another input coordinate
            ex_out, ex_in, has_u = d, cfg.d_in + 1, False
        self._add_linear(rng, "embed.x.l1", ex_in, d)
        self._add_linear(rng, "embed.x.l2", d, ex_out)
        if has_u:
            self._add_linear(rng, "embed.u.l1", 1, d)
            self._add_linear(rng, "embed.u.l2", d, d - ex_out)
        self._add_linear(rng, "embed.y.l1", 1, d)
        self._add_linear(rng, "embed.y.l2", d, d)
        for i in range(cfg.n_layers):
            p = f"block{i}"
            self._add(f"{p}.ln1.g", np.ones(d))
            self._add(f"{p}.ln1.b", np.zeros(d))
            for nm in ("q", "k", "v", "o"):
                self._add_linear(rng, f"{p}.attn.{nm}", d, d)
            self._add(f"{p}.ln2.g", np.ones(d))
            self._add(f"{p}.ln2.b", np.zeros(d))
            self._add_linear(rng, f"{p}.ff.l1", d, cfg.d_ff)
            self._add_linear(rng, f"{p}.ff.l2", cfg.d_ff, d)
        pol_in = d + (1 if cfg.use_time_token else 0)
        self._add_linear(rng, "policy.l1", pol_in, cfg.d_ff)
        self._add_linear(rng, "policy.l2", cfg.d_ff, 1)
        self._add_linear(rng, "gmm.weights", d, cfg.n_mixture)
        self._add_linear(rng, "gmm.means", d, cfg.n_mixture)
        self._add_linear(rng, "gmm.stds", d, cfg.n_mixture)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _lin(self, name: str, x):
        return ad.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def _mlp2(self, name: str, x):
        return self._lin(f"{name}.l2", ad.relu(self._lin(f"{name}.l1", x)))

    # -- token construction -----------------------------------------------------

    def embed_xu(self, x: np.ndarray, u: np.ndarray) -> Tensor:
        """Location/feedback token content for query, target, or context rows."""
        mode = self.config.feedback_mode
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
        if mode == "as_feature":
            return self._mlp2("embed.x", np.concatenate([x, u], axis=1))
        ex = self._mlp2("embed.x", x)
        if mode == "disabled":
            return ex
        eu = self._mlp2("embed.u", u)
        if mode == "concat":
            return ad.concat([ex, eu], axis=1)
        return ad.add(ex, eu)  # add mode: summed directly

    def embed_y(self, y: np.ndarray) -> Tensor:
        return self._mlp2("embed.y", np.asarray(y, dtype=np.float64).reshape(-1, 1))

    # -- backbone ------------------------------------------------------------------

    def backbone(self, tokens: Tensor, attend_to: np.ndarray) -> Tensor:
        """Run the encoder stack.

        tokens: (B, N, d). attend_to: boolean (B, N); True marks tokens that
        everyone may attend to (context, plus queries when enabled). Rows are
        unrestricted: masking is key-based only.
        """
        cfg = self.config
        B, N, d = tokens.shape
        H, dh = cfg.n_heads, self.d_head
        # additive key mask: 0 where attendable, -inf elsewhere (constant)
        key_mask = Tensor(
            np.where(attend_to, 0.0, -np.inf)[:, None, None, :]
        )
        h = tokens
        scale = 1.0 / np.sqrt(dh)
        for i in range(cfg.n_layers):
            p = f"block{i}"
            x = ad.layer_norm(h, self.params[f"{p}.ln1.g"], self.params[f"{p}.ln1.b"])
            q = self._split_heads(self._lin(f"{p}.attn.q", x), B, N, H, dh)
            k = self._split_heads(self._lin(f"{p}.attn.k", x), B, N, H, dh)
            v = self._split_heads(self._lin(f"{p}.attn.v", x), B, N, H, dh)
            scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale)
            scores = ad.add(scores, key_mask)
            attn = ad.softmax(scores, axis=-1)
            mixed = ad.matmul(attn, v)  # (B, H, N, dh)
            mixed = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (B, N, d))
            h = ad.add(h, self._lin(f"{p}.attn.o", mixed))
            x = ad.layer_norm(h, self.params[f"{p}.ln2.g"], self.params[f"{p}.ln2.b"])
            h = ad.add(h, self._lin(f"{p}.ff.l2", ad.relu(self._lin(f"{p}.ff.l1", x))))
        return h

    @staticmethod
    def _split_heads(x: Tensor, B: int, N: int, H: int, dh: int) -> Tensor:
        return ad.transpose(ad.reshape(x, (B, N, H, dh)), (0, 2, 1, 3))

    # -- heads -----------------------------------------------------------------------

    def policy_logits(self, query_out: Tensor, t_frac: np.ndarray | None = None) -> Tensor:
        """Scalar logit per query token; t_frac is (B,) when time tokens are on."""
        inp = query_out
        if self.config.use_time_token:
            B, Nq, _ = query_out.shape
            tt = np.broadcast_to(
                np.asarray(t_frac, dtype=np.float64)[:, None, None], (B, Nq, 1)
            )
            inp = ad.concat([query_out, Tensor(tt)], axis=2)
        h = ad.relu(self._lin("policy.l1", inp))
        logits = self._lin("policy.l2", h)
        return ad.reshape(logits, logits.shape[:-1])

    @staticmethod
    def policy_log_probs(logits: Tensor, mask: np.ndarray) -> Tensor:
        """Log-softmax over unmasked candidates; masked entries get -inf."""
        if not np.all(mask.any(axis=-1)):
            raise ValueError("policy head needs at least one unmasked candidate")
        return ad.log_softmax(ad.masked_fill(logits, mask, -np.inf), axis=-1)

    def gmm_params(self, out: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(log-weights, means, stds), each (..., K)."""
        log_w = ad.log_softmax(self._lin("gmm.weights", out), axis=-1)
        means = self._lin("gmm.means", out)
        stds = ad.add(ad.softplus(self._lin("gmm.stds", out)), STD_FLOOR)
        return log_w, means, stds

    @staticmethod
    def gmm_log_density(log_w: Tensor, means: Tensor, stds: Tensor, y: np.ndarray) -> Tensor:
        """Mixture log-density of constant labels y, shape = leading dims."""
        y = Tensor(np.asarray(y, dtype=np.float64)[..., None])
        z = ad.div(ad.sub(y, means), stds)
        comp = ad.sub(
            ad.mul(ad.mul(z, z), -0.5),
            ad.add(ad.log(stds), 0.5 * LOG_2PI),
        )
        return ad.logsumexp(ad.add(log_w, comp), axis=-1)

    # -- episode-level forward ------------------------------------------------------

    def episode_forward(self, ep: EpisodeTensors) -> dict:
        """Teacher-forced forward over all steps of one collected episode.

        Step contexts/pools are stacked along the batch axis, so one pass
        covers the full trajectory. Returns per-step chosen log-probs, the
        prediction NLL over remaining-pool+target labels, and intermediates.
        """
        cfg = self.config
        T = int(ep.horizon)
        n0, Np, Nt = len(ep.ctx_y), len(ep.pool_u), len(ep.tgt_u)
        N = n0 + Np + Nt

        sel_before = np.zeros((T, Np), dtype=bool)
        for t in range(1, T):
            sel_before[t] = sel_before[t - 1]
            sel_before[t, ep.selections[t - 1]] = True
        query_mask = ~sel_before  # remaining pool per step

        all_x = np.vstack([ep.ctx_x, ep.pool_x, ep.tgt_x])
        all_u = np.concatenate([ep.ctx_u, ep.pool_u, ep.tgt_u])
        base = self.embed_xu(all_x, all_u)  # (N, d)
        ey = self.embed_y(np.concatenate([ep.ctx_y, ep.pool_y]))  # (n0+Np, d)
        ey_full = ad.concat([ey, Tensor(np.zeros((Nt, cfg.d_embed)))], axis=0)

        ctx_tok = np.zeros((T, N), dtype=bool)
        ctx_tok[:, :n0] = True
        ctx_tok[:, n0 : n0 + Np] = sel_before
        qry_tok = np.zeros((T, N), dtype=bool)
        qry_tok[:, n0 : n0 + Np] = query_mask

        tokens = ad.add(
            ad.reshape(base, (1, N, cfg.d_embed)),
            ad.mul(
                Tensor(ctx_tok[:, :, None].astype(np.float64)),
                ad.reshape(ey_full, (1, N, cfg.d_embed)),
            ),
        )
        attend_to = ctx_tok | (qry_tok if cfg.query_attends_queries else False)
        out = self.backbone(tokens, attend_to)

        pool_out = out[:, n0 : n0 + Np, :]
        t_frac = np.arange(T, dtype=np.float64) / max(T, 1)
        logits = self.policy_logits(pool_out, t_frac)
        log_probs = self.policy_log_probs(logits, query_mask)
        chosen_log_probs = log_probs[(np.arange(T), ep.selections)]

        sup_out = out[:, n0:, :]  # pool + targets
        log_w, means, stds = self.gmm_params(sup_out)
        y_sup = np.concatenate([ep.pool_y, ep.tgt_y])
        log_dens = self.gmm_log_density(log_w, means, stds, np.broadcast_to(y_sup, (T, Np + Nt)))
        sup_mask = np.concatenate([query_mask, np.ones((T, Nt), dtype=bool)], axis=1)
        masked = ad.mul(log_dens, Tensor(sup_mask.astype(np.float64)))
        per_step = ad.div(
            ad.reduce_sum(masked, axis=1), Tensor(sup_mask.sum(axis=1).astype(np.float64))
        )
        pred_nll = ad.mul(ad.reduce_mean(per_step), -1.0)

        return {
            "chosen_log_probs": chosen_log_probs,
            "pred_nll": pred_nll,
            "log_probs": log_probs,
            "logits": logits,
            "gmm": (log_w, means, stds),
            "query_mask": query_mask,
        }

    # -- deployment ------------------------------------------------------------------

    def step_forward(
        self,
        history_x: np.ndarray,
        history_u: np.ndarray,
        history_y: np.ndarray,
        cand_x: np.ndarray,
        cand_u: np.ndarray,
        step: int = 0,
        horizon: int = 1,
    ) -> tuple[PolicyDistribution, GmmPosterior]:
        """One inference pass: selection distribution and predictive mixture
        over the given candidates, conditioned on the augmented history."""
        cfg = self.config
        with ad.no_grad():
            n0, Nq = len(history_y), len(cand_x)
            all_x = np.vstack([history_x, cand_x])
            all_u = np.concatenate([history_u, cand_u])
            base = self.embed_xu(all_x, all_u)
            ey = self.embed_y(history_y)
            ctx_tok = np.zeros((1, n0 + Nq), dtype=bool)
            ctx_tok[:, :n0] = True
            addend = np.zeros((n0 + Nq, cfg.d_embed))
            tokens = ad.reshape(
                ad.add(base, ad.concat([ey, Tensor(addend[n0:])], axis=0)),
                (1, n0 + Nq, cfg.d_embed),
            )
            attend_to = ctx_tok.copy()
            if cfg.query_attends_queries:
                attend_to[:, n0:] = True
            out = self.backbone(tokens, attend_to)
            q_out = out[:, n0:, :]
            t_frac = np.array([step / max(horizon, 1)])
            logits = self.policy_logits(q_out, t_frac)
            log_probs = self.policy_log_probs(
                logits, np.ones((1, Nq), dtype=bool)
            ).data[0]
            log_w, means, stds = self.gmm_params(q_out)
        policy = PolicyDistribution(probs=np.exp(log_probs), log_probs=log_probs)
        gmm = GmmPosterior(
            weights=np.exp(log_w.data[0]), means=means.data[0], stds=stds.data[0]
        )
        return policy, gmm


# -- checkpoints ------------------------------------------------------------------------


def save_checkpoint(path, network: FeedbackAwareNetwork) -> None:
    """Versioned binary checkpoint: JSON header, then raw float64 weight bytes
    in parameter declaration order. Round-trips bit-exactly."""
    header = {
        "format": 1,
        "config": asdict(network.config),
        "params": [[name, list(t.data.shape)] for name, t in network.params.items()],
        "dtype": "<f8",
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for t in network.params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> FeedbackAwareNetwork:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format") != 1:
            raise ValueError(f"unsupported checkpoint format {header.get('format')}")
        config = ModelConfig(**header["config"])
        net = FeedbackAwareNetwork(config, rng=0)
        declared = [[name, list(t.data.shape)] for name, t in net.params.items()]
        if declared != [[n, list(s)] for n, s in header["params"]]:
            raise ValueError("checkpoint parameter layout does not match config")
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            net.params[name].data = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return net
