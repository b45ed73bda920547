"""Micro-level learner: extended Q-network over own observation plus latent
codes of other agents' movement, with an action-prediction bottleneck.

One parameter set serves all agents (homogeneous policies); per-agent data
enters through the observation. The encoder is a small variational bottleneck:
it emits mean/log-variance of a 16-d Gaussian per other-agent transition pair,
the decoder predicts that agent's action from the latent, and the Q-network
consumes the latents next to the observation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 0.95
    rho1: float = 1.0      # action cross-entropy weight
    rho2: float = 1e-3     # latent compression (KL) weight
    rho3: float = 1e-3     # action-information weight, folded into the CE term
    lam: float = 0.3       # adversarial advice weight

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if min(self.rho1, self.rho2, self.rho3, self.lam) < 0:
            raise ValueError("loss weights must be non-negative")


PAIR_DIM = 4        # (previous, current) 2-D positions of one other agent
LATENT_DIM = 16
ENC_HIDDEN = 32
Q_HIDDEN = (300, 200)


class AgentNet:
    """Shared Q-network, bottleneck encoder, and action decoder."""

    def __init__(self, n_agents: int, obs_dim: int, rng: np.random.Generator):
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        q_in = obs_dim + (n_agents - 1) * LATENT_DIM
        h1, h2 = Q_HIDDEN
        self.q_w1 = ad.glorot(rng, q_in, h1)
        self.q_b1 = ad.zeros(1, h1)
        self.q_w2 = ad.glorot(rng, h1, h2)
        self.q_b2 = ad.zeros(1, h2)
        self.q_w3 = ad.glorot(rng, h2, n_agents)
        self.q_b3 = ad.zeros(1, n_agents)
        self.enc_w1 = ad.glorot(rng, PAIR_DIM, ENC_HIDDEN)
        self.enc_b1 = ad.zeros(1, ENC_HIDDEN)
        self.enc_wm = ad.glorot(rng, ENC_HIDDEN, LATENT_DIM)
        self.enc_bm = ad.zeros(1, LATENT_DIM)
        self.enc_wv = ad.glorot(rng, ENC_HIDDEN, LATENT_DIM)
        self.enc_bv = ad.zeros(1, LATENT_DIM)
        self.dec_w = ad.glorot(rng, LATENT_DIM, n_agents)
        self.dec_b = ad.zeros(1, n_agents)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "q_w1": self.q_w1, "q_b1": self.q_b1,
            "q_w2": self.q_w2, "q_b2": self.q_b2,
            "q_w3": self.q_w3, "q_b3": self.q_b3,
            "enc_w1": self.enc_w1, "enc_b1": self.enc_b1,
            "enc_wm": self.enc_wm, "enc_bm": self.enc_bm,
            "enc_wv": self.enc_wv, "enc_bv": self.enc_bv,
            "dec_w": self.dec_w, "dec_b": self.dec_b,
        }

    def load_values(self, named: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(named)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
        for k, p in params.items():
            if named[k].shape != p.value.shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: "
                                 f"{named[k].shape} vs {p.value.shape}")
            p.value = named[k].astype(np.float64)

    # -- tape forward passes (training) --

    def encode(self, pairs: Tensor, noise: np.ndarray | None = None):
        """Return (z, mean, logvar); z is the mean unless reparameterizing noise is given."""
        h = ad.relu(ad.add(ad.matmul(pairs, self.enc_w1), self.enc_b1))
        mean = ad.add(ad.matmul(h, self.enc_wm), self.enc_bm)
        logvar = ad.add(ad.matmul(h, self.enc_wv), self.enc_bv)
        if noise is None:
            return mean, mean, logvar
        std = ad.exp(ad.mul(logvar, 0.5))
        z = ad.add(mean, ad.mul(std, Tensor(noise)))
        return z, mean, logvar

    def decode(self, z: Tensor) -> Tensor:
        return ad.add(ad.matmul(z, self.dec_w), self.dec_b)

    def q_from_latents(self, obs: Tensor, latents: list[Tensor]) -> Tensor:
        x = ad.concat_cols(obs, *latents)
        h = ad.relu(ad.add(ad.matmul(x, self.q_w1), self.q_b1))
        h = ad.relu(ad.add(ad.matmul(h, self.q_w2), self.q_b2))
        return ad.add(ad.matmul(h, self.q_w3), self.q_b3)

    def q_forward(self, obs: Tensor, pairs_per_slot: list[Tensor],
                  noises: list[np.ndarray] | None = None):
        """Q-values (B, N) plus the per-slot (z, mean, logvar) triples."""
        if len(pairs_per_slot) != self.n_agents - 1:
            raise ad.ShapeError(f"expected {self.n_agents - 1} transition slots, "
                                f"got {len(pairs_per_slot)}")
        codes = []
        for j, pairs in enumerate(pairs_per_slot):
            noise = None if noises is None else noises[j]
            codes.append(self.encode(pairs, noise))
        q = self.q_from_latents(obs, [c[0] for c in codes])
        return q, codes

    def policy_forward(self, obs: np.ndarray, pairs: np.ndarray) -> Tensor:
        """Softmax policy rows with live gradients; mean latents, as when acting.

        `obs` is (B, obs_dim), `pairs` is (N-1, B, 4).
        """
        q, _ = self.q_forward(Tensor(obs), [Tensor(pairs[j]) for j in range(self.n_agents - 1)])
        return ad.softmax_rows(q)

    # -- raw numpy forward (acting / evaluation / TD targets) --

    def encode_mean_np(self, pairs: np.ndarray) -> np.ndarray:
        h = np.maximum(pairs @ self.enc_w1.value + self.enc_b1.value, 0.0)
        return h @ self.enc_wm.value + self.enc_bm.value

    def q_values_np(self, obs: np.ndarray, pairs: np.ndarray) -> np.ndarray:
        """Greedy-path Q-values; `obs` (B, obs_dim) or (obs_dim,), `pairs` rows per slot.

        `pairs` is (N-1, 4) for a single observation or (N-1, B, 4) batched.
        Uses mean latents; bitwise-matches the tape forward with no noise.
        """
        single = obs.ndim == 1
        if single:
            obs = obs[None, :]
            pairs = pairs[:, None, :]
        latents = [self.encode_mean_np(pairs[j]) for j in range(self.n_agents - 1)]
        x = np.concatenate([obs] + latents, axis=1)
        h = np.maximum(x @ self.q_w1.value + self.q_b1.value, 0.0)
        h = np.maximum(h @ self.q_w2.value + self.q_b2.value, 0.0)
        q = h @ self.q_w3.value + self.q_b3.value
        return q[0] if single else q

    def policy_np(self, obs: np.ndarray, pairs: np.ndarray) -> np.ndarray:
        q = self.q_values_np(obs, pairs)
        shifted = q - q.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def act(self, obs: np.ndarray, pairs: np.ndarray, epsilon: float,
            rng: np.random.Generator) -> int:
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.n_agents))
        return int(np.argmax(self.q_values_np(obs, pairs)))


@dataclass
class Transition:
    agent: int
    episode: int
    t: int
    obs: np.ndarray            # o^t
    pairs: np.ndarray          # (N-1, 4) other-agent (current, next) position pairs
    action: int
    reward: float
    next_obs: np.ndarray       # o^{t+1}
    done: bool
    other_actions: np.ndarray  # (N-1,) true actions of the other agents at t


@dataclass
class TransitionBatch:
    obs: np.ndarray
    pairs: np.ndarray          # (N-1, B, 4)
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    other_actions: np.ndarray  # (B, N-1)


class ReplayBuffer:
    """Merged FIFO buffer over all agents' transitions."""

    def __init__(self, capacity: int = 1500):
        self._data: deque[Transition] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._data)

    def append(self, tr: Transition):
        self._data.append(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if not self._data:
            raise ValueError("sample from empty replay buffer")
        idx = rng.integers(len(self._data), size=batch_size)
        items = [self._data[i] for i in idx]
        n_slots = items[0].pairs.shape[0]
        return TransitionBatch(
            obs=np.stack([it.obs for it in items]),
            pairs=np.stack([np.stack([it.pairs[j] for it in items]) for j in range(n_slots)]),
            actions=np.array([it.action for it in items], dtype=np.int64),
            rewards=np.array([it.reward for it in items]),
            next_obs=np.stack([it.next_obs for it in items]),
            dones=np.array([it.done for it in items], dtype=bool),
            other_actions=np.stack([it.other_actions for it in items]),
        )


def _onehot(indices: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(indices), n))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def td_targets(net: AgentNet, batch: TransitionBatch, gamma: float) -> np.ndarray:
    """Bootstrapped targets, gradient-free; terminal transitions use the bare reward."""
    q_next = net.q_values_np(batch.next_obs, batch.pairs)
    return batch.rewards + gamma * (~batch.dones) * q_next.max(axis=1)


def agent_loss(net: AgentNet, batch: TransitionBatch, adversarial_term: Tensor | None,
               cfg: LossConfig, noise_rng: np.random.Generator | None = None) -> Tensor:
    """Eq.-style total: TD + weighted action CE + latent KL + advice term.

    `adversarial_term` is log(1 - D(agent sets)) supplied by the discriminator
    module (None when the variant has no discriminator or before warmup).
    """
    b = batch.obs.shape[0]
    if b == 0:
        raise ValueError("empty minibatch")
    n = net.n_agents
    y = td_targets(net, batch, cfg.gamma)

    noises = None
    if noise_rng is not None:
        noises = [noise_rng.standard_normal((b, LATENT_DIM)) for _ in range(n - 1)]
    q, codes = net.q_forward(Tensor(batch.obs), [Tensor(batch.pairs[j]) for j in range(n - 1)],
                             noises)

    act_mask = Tensor(_onehot(batch.actions, n))
    q_taken = ad.row_sums(ad.mul(q, act_mask))            # (B, 1)
    td_err = ad.sub(q_taken, Tensor(y[:, None]))
    loss = ad.mean_all(ad.mul(td_err, td_err))

    ce_weight = cfg.rho1 + cfg.rho3
    for j, (z, mean, logvar) in enumerate(codes):
        if ce_weight > 0.0:
            probs = ad.clamp_prob(ad.softmax_rows(net.decode(z)))
            true_mask = Tensor(_onehot(batch.other_actions[:, j], n))
            ce = ad.neg(ad.mean_all(ad.row_sums(ad.mul(ad.log(probs), true_mask))))
            loss = ad.add(loss, ad.mul(ce, ce_weight))
        if cfg.rho2 > 0.0:
            kl_rows = ad.sub(ad.add(ad.exp(logvar), ad.mul(mean, mean)),
                             ad.add(logvar, 1.0))
            kl = ad.mul(ad.mean_all(ad.row_sums(kl_rows)), 0.5)
            loss = ad.add(loss, ad.mul(kl, cfg.rho2))

    if adversarial_term is not None and cfg.lam > 0.0:
        loss = ad.add(loss, ad.mul(adversarial_term, cfg.lam))
    return loss


def epsilon_at(episode: int, total_episodes: int, start: float = 1.0,
               end: float = 0.05, fraction: float = 0.6) -> float:
    """Linear decay from `start` to `end` over the first `fraction` of episodes."""
    horizon = max(int(round(total_episodes * fraction)), 1)
    if episode >= horizon:
        return end
    if horizon == 1:
        return end
    frac = (episode - 1) / (horizon - 1)
    return start + (end - start) * frac
