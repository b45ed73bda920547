"""Macro-level policy discriminator: a small transformer encoder over a set of
(state, action-distribution) tokens plus a learned class token, classifying the
set as advisor-made or agent-made.

No positional encoding is used, so in eval mode the judgement is exactly
invariant to the order of the pairs. One discriminator is trained per agent
index. A single-pair variant (M=1) backs the state-action baseline.
"""

from __future__ import annotations

import csv

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

D_MODEL = 64
N_HEADS = 4
HEAD_DIM = D_MODEL // N_HEADS
FF_DIM = 256
N_LAYERS = 3
DROPOUT = 0.1


class PolicyDiscriminator:
    """Transformer set classifier: CLS + M projected pairs -> probability."""

    def __init__(self, obs_dim: int, n_actions: int, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        d = D_MODEL
        self.proj_w = ad.glorot(rng, obs_dim + n_actions, d)
        self.proj_b = ad.zeros(1, d)
        self.cls = ad.glorot(rng, 1, d)
        self.layers = []
        for _ in range(N_LAYERS):
            layer = {
                "wq": [ad.glorot(rng, d, HEAD_DIM) for _ in range(N_HEADS)],
                "wk": [ad.glorot(rng, d, HEAD_DIM) for _ in range(N_HEADS)],
                "wv": [ad.glorot(rng, d, HEAD_DIM) for _ in range(N_HEADS)],
                "wo": ad.glorot(rng, d, d),
                "bo": ad.zeros(1, d),
                "ln1_g": Tensor(np.ones((1, d)), requires_grad=True),
                "ln1_b": ad.zeros(1, d),
                "ff_w1": ad.glorot(rng, d, FF_DIM),
                "ff_b1": ad.zeros(1, FF_DIM),
                "ff_w2": ad.glorot(rng, FF_DIM, d),
                "ff_b2": ad.zeros(1, d),
                "ln2_g": Tensor(np.ones((1, d)), requires_grad=True),
                "ln2_b": ad.zeros(1, d),
            }
            self.layers.append(layer)
        self.out_w = ad.glorot(rng, d, 1)
        self.out_b = ad.zeros(1, 1)

    def parameters(self) -> dict[str, Tensor]:
        out = {"proj_w": self.proj_w, "proj_b": self.proj_b, "cls": self.cls,
               "out_w": self.out_w, "out_b": self.out_b}
        for i, layer in enumerate(self.layers):
            for h in range(N_HEADS):
                out[f"l{i}_wq{h}"] = layer["wq"][h]
                out[f"l{i}_wk{h}"] = layer["wk"][h]
                out[f"l{i}_wv{h}"] = layer["wv"][h]
            for key in ("wo", "bo", "ln1_g", "ln1_b", "ff_w1", "ff_b1",
                        "ff_w2", "ff_b2", "ln2_g", "ln2_b"):
                out[f"l{i}_{key}"] = layer[key]
        return out

    def load_values(self, named: dict[str, np.ndarray]):
        for k, p in self.parameters().items():
            if k not in named:
                raise ValueError(f"checkpoint missing parameter {k}")
            if named[k].shape != p.value.shape:
                raise ValueError(f"checkpoint shape mismatch for {k}")
            p.value = named[k].astype(np.float64)

    def _encoder_layer(self, x: Tensor, layer, training: bool,
                       rng: np.random.Generator | None) -> Tensor:
        scale = 1.0 / np.sqrt(HEAD_DIM)
        heads = []
        for h in range(N_HEADS):
            q = ad.matmul(x, layer["wq"][h])
            k = ad.matmul(x, layer["wk"][h])
            v = ad.matmul(x, layer["wv"][h])
            scores = ad.mul(ad.matmul(q, ad.transpose(k)), scale)
            attn = ad.softmax_rows(scores)
            if training:
                attn = ad.dropout(attn, DROPOUT, rng, training)
            heads.append(ad.matmul(attn, v))
        attn_out = ad.add(ad.matmul(ad.concat_cols(*heads), layer["wo"]), layer["bo"])
        if training:
            attn_out = ad.dropout(attn_out, DROPOUT, rng, training)
        x = ad.layer_norm(ad.add(x, attn_out), layer["ln1_g"], layer["ln1_b"])
        ff = ad.relu(ad.add(ad.matmul(x, layer["ff_w1"]), layer["ff_b1"]))
        ff = ad.add(ad.matmul(ff, layer["ff_w2"]), layer["ff_b2"])
        if training:
            ff = ad.dropout(ff, DROPOUT, rng, training)
        return ad.layer_norm(ad.add(x, ff), layer["ln2_g"], layer["ln2_b"])

    def judge(self, states: np.ndarray, dists, training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        """Probability that the (state, distribution) set came from the advisor.

        `dists` may be a live Tensor (gradients flow into it) or a plain array.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        m = states.shape[0]
        if m < 1:
            raise ad.DomainError("judge of an empty sample set")
        if training and rng is None:
            raise ValueError("training-mode judge needs a dropout rng")
        if isinstance(dists, Tensor):
            if dists.value.shape != (m, self.n_actions):
                raise ad.ShapeError("distributions do not align with states")
            pairs = ad.concat_cols(Tensor(states), dists)
        else:
            dists = np.atleast_2d(np.asarray(dists, dtype=np.float64))
            if dists.shape != (m, self.n_actions):
                raise ad.ShapeError("distributions do not align with states")
            pairs = Tensor(np.concatenate([states, dists], axis=1))
        tokens = ad.add(ad.matmul(pairs, self.proj_w), self.proj_b)
        x = ad.concat_rows(self.cls, tokens)
        for layer in self.layers:
            x = self._encoder_layer(x, layer, training, rng)
        selector = np.zeros((1, m + 1))
        selector[0, 0] = 1.0
        cls_out = ad.matmul(Tensor(selector), x)
        logit = ad.add(ad.matmul(cls_out, self.out_w), self.out_b)
        return ad.clamp_prob(ad.sigmoid(logit))

    def judge_pair(self, state: np.ndarray, dist, training: bool = False,
                   rng: np.random.Generator | None = None) -> Tensor:
        """Single state-action judgement (the M=1 baseline input)."""
        state = np.asarray(state, dtype=np.float64).reshape(1, -1)
        if isinstance(dist, Tensor):
            if dist.value.shape[0] != 1:
                raise ad.ShapeError("judge_pair takes exactly one distribution row")
            return self.judge(state, dist, training, rng)
        return self.judge(state, np.asarray(dist).reshape(1, -1), training, rng)


def disc_loss(disc: PolicyDiscriminator, states: np.ndarray,
              advisor_dists: np.ndarray, agent_dists: np.ndarray,
              training: bool = True, rng: np.random.Generator | None = None) -> Tensor:
    """-[log D(advisor set) + log(1 - D(agent set))]; both sides share `states`.

    Action inputs are plain arrays here: the discriminator update treats the
    advisor and agent as fixed generators.
    """
    d_adv = disc.judge(states, np.asarray(advisor_dists), training, rng)
    d_agent = disc.judge(states, np.asarray(agent_dists), training, rng)
    return ad.neg(ad.add(ad.log(d_adv), ad.log(ad.add(ad.neg(d_agent), 1.0))))


def adversarial_term_for_agent(disc: PolicyDiscriminator, states: np.ndarray,
                               agent_dists: Tensor, training: bool = True,
                               rng: np.random.Generator | None = None) -> Tensor:
    """log(1 - D(agent set)) with discriminator parameters frozen."""
    with ad.frozen(disc.parameters().values()):
        d = disc.judge(states, agent_dists, training, rng)
        return ad.log(ad.add(ad.neg(d), 1.0))


def boost_term_for_advisor(disc: PolicyDiscriminator, states: np.ndarray,
                           advice: Tensor, training: bool = True,
                           rng: np.random.Generator | None = None) -> Tensor:
    """-log D(advice set) with discriminator parameters frozen."""
    with ad.frozen(disc.parameters().values()):
        d = disc.judge(states, advice, training, rng)
        return ad.neg(ad.log(d))


def _select_row(dists: Tensor, row: int) -> Tensor:
    sel = np.zeros((1, dists.value.shape[0]))
    sel[0, row] = 1.0
    return ad.matmul(Tensor(sel), dists)


def disc_loss_pairs(disc: PolicyDiscriminator, states: np.ndarray,
                    advisor_dists: np.ndarray, agent_dists: np.ndarray,
                    training: bool = True, rng: np.random.Generator | None = None) -> Tensor:
    """Per-pair variant of the discriminator loss, averaged over the states."""
    states = np.atleast_2d(states)
    m = states.shape[0]
    total = None
    for j in range(m):
        d_adv = disc.judge_pair(states[j], advisor_dists[j], training, rng)
        d_agent = disc.judge_pair(states[j], agent_dists[j], training, rng)
        term = ad.neg(ad.add(ad.log(d_adv), ad.log(ad.add(ad.neg(d_agent), 1.0))))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / m)


def adversarial_term_for_agent_pairs(disc: PolicyDiscriminator, states: np.ndarray,
                                     agent_dists: Tensor, training: bool = True,
                                     rng: np.random.Generator | None = None) -> Tensor:
    states = np.atleast_2d(states)
    m = states.shape[0]
    with ad.frozen(disc.parameters().values()):
        total = None
        for j in range(m):
            d = disc.judge_pair(states[j], _select_row(agent_dists, j), training, rng)
            term = ad.log(ad.add(ad.neg(d), 1.0))
            total = term if total is None else ad.add(total, term)
        return ad.mul(total, 1.0 / m)


def boost_term_for_advisor_pairs(disc: PolicyDiscriminator, states: np.ndarray,
                                 advice: Tensor, training: bool = True,
                                 rng: np.random.Generator | None = None) -> Tensor:
    states = np.atleast_2d(states)
    m = states.shape[0]
    with ad.frozen(disc.parameters().values()):
        total = None
        for j in range(m):
            d = disc.judge_pair(states[j], _select_row(advice, j), training, rng)
            term = ad.neg(ad.log(d))
            total = term if total is None else ad.add(total, term)
        return ad.mul(total, 1.0 / m)


def dump_judgements(path, records):
    """Debug CSV of (set_id, side, probability) judgement records."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["set_id", "side", "probability"])
        for set_id, side, prob in records:
            writer.writerow([set_id, side, repr(float(prob))])
