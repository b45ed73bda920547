"""Diagnostics: coordination loss of decision sets, success/time summaries,
and a neural mutual-information probe (Donsker-Varadhan bound with
EMA-corrected gradients).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .advisor import SpatioTemporalGraph
from .autodiff import Tensor


def coordination_loss(graph: SpatioTemporalGraph, dists: np.ndarray) -> float:
    """Neighbor-averaged temporal discontinuity + spatial conflict of `dists`.

    Per vertex: mean over temporal neighbors of -log sigmoid(pi_v . pi_u)
    plus mean over spatial neighbors of -log sigmoid(-pi_v . pi_w); empty
    neighborhoods contribute zero. Returns the mean over vertices.
    """
    dists = np.asarray(dists, dtype=np.float64)
    if dists.shape != (graph.n_vertices, graph.n_agents):
        raise ValueError(f"distribution matrix must be (V, N), got {dists.shape}")
    inner = dists @ dists.T
    nls = np.logaddexp(0.0, -inner)       # -log sigmoid(x)
    nls_neg = np.logaddexp(0.0, inner)    # -log sigmoid(-x)
    temporal = (graph.temporal_mean * nls).sum(axis=1)
    spatial = (graph.spatial_mean * nls_neg).sum(axis=1)
    return float(np.mean(temporal + spatial))


def success_rate(success_flags) -> float:
    flags = list(success_flags)
    if not flags:
        raise ValueError("no episodes")
    return float(np.mean([bool(f) for f in flags]))


def mean_normalized_time(times) -> float:
    times = list(times)
    if not times:
        raise ValueError("no episodes")
    return float(np.mean(times))


class _StatNet:
    """Two hidden ReLU layers of 64 units; scalar statistic output."""

    def __init__(self, in_dim: int, rng: np.random.Generator, hidden: int = 64):
        self.w1 = ad.glorot(rng, in_dim, hidden)
        self.b1 = ad.zeros(1, hidden)
        self.w2 = ad.glorot(rng, hidden, hidden)
        self.b2 = ad.zeros(1, hidden)
        self.w3 = ad.glorot(rng, hidden, 1)
        self.b3 = ad.zeros(1, 1)

    def parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
                "w3": self.w3, "b3": self.b3}

    def forward(self, x: Tensor) -> Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        h = ad.relu(ad.add(ad.matmul(h, self.w2), self.b2))
        return ad.add(ad.matmul(h, self.w3), self.b3)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1.value + self.b1.value, 0.0)
        h = np.maximum(h @ self.w2.value + self.b2.value, 0.0)
        return h @ self.w3.value + self.b3.value


_T_CLIP = 50.0  # statistic clip keeps exp() finite on separable inputs


def mine_estimate(z: np.ndarray, a: np.ndarray, steps: int = 400,
                  rng: np.random.Generator | None = None, batch_size: int = 256,
                  lr: float = 1e-3, ema_rate: float = 0.99) -> float:
    """Mutual-information lower bound (nats) between paired samples.

    Trains the statistics network on E_joint[T] - log E_marginal[e^T] with
    shuffled-within-batch marginals and the EMA denominator correction, then
    returns the full-sample bound averaged over several marginal shuffles,
    clamped at zero.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if z.shape[0] == 1 and z.shape[1] > 1 and a.shape[0] != 1:
        z = z.T
    if a.shape[0] == 1 and a.shape[1] > 1 and z.shape[0] != 1:
        a = a.T
    if z.shape[0] != a.shape[0]:
        raise ValueError("z and a must pair up sample-wise")
    n = z.shape[0]

    def standardize(x):
        mu = x.mean(axis=0, keepdims=True)
        sd = x.std(axis=0, keepdims=True)
        return (x - mu) / np.maximum(sd, 1e-8)

    z = standardize(z)
    a = standardize(a)

    net = _StatNet(z.shape[1] + a.shape[1], rng)
    optimizer = ad.Adam(net.parameters(), lr=lr)
    ema = None
    batch = min(batch_size, n)
    for _ in range(steps):
        idx = rng.integers(n, size=batch)
        zb, ab = z[idx], a[idx]
        perm = rng.permutation(batch)
        t_joint = net.forward(Tensor(np.concatenate([zb, ab], axis=1)))
        t_marg = net.forward(Tensor(np.concatenate([zb, ab[perm]], axis=1)))
        mean_t = ad.mean_all(t_joint)
        mean_exp = ad.mean_all(ad.exp(ad.clip(t_marg, -_T_CLIP, _T_CLIP)))
        denom = float(mean_exp.value[0, 0])
        ema = denom if ema is None else ema_rate * ema + (1.0 - ema_rate) * denom
        loss = ad.add(ad.neg(mean_t), ad.mul(mean_exp, 1.0 / max(ema, 1e-12)))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    t_all = net.forward_np(np.concatenate([z, a], axis=1))
    mean_t = float(t_all.mean())
    denoms = []
    for _ in range(10):
        perm = rng.permutation(n)
        t_m = net.forward_np(np.concatenate([z, a[perm]], axis=1))
        denoms.append(float(np.exp(np.clip(t_m, -_T_CLIP, _T_CLIP)).mean()))
    estimate = mean_t - float(np.log(np.mean(denoms)))
    return max(0.0, estimate)
