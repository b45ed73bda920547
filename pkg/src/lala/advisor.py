"""Meso-level advisor: a two-channel graph convolution over the decision graph.

Vertices are (agent, timestep) decisions; spatial edges join different agents
at the same step, temporal edges join one agent's consecutive steps. Each
layer aggregates the two neighborhoods with separate weights, fuses with the
vertex's own features, and the final layer emits advice distributions. The
training objective pulls temporally adjacent advice together, pushes spatially
adjacent advice apart, and anchors advice to the most confident agent.
"""

from __future__ import annotations

import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class SpatioTemporalGraph:
    """Decision graph for one episode: N agents x T' steps, t-major agent-minor."""

    def __init__(self, features: np.ndarray, n_agents: int, n_steps: int):
        if features.shape != (n_agents * n_steps, n_agents):
            raise ValueError(f"feature matrix must be (N*T', N), got {features.shape}")
        self.n_agents = n_agents
        self.n_steps = n_steps
        self.features = features
        self.spatial_neighbors = [
            [t * n_agents + j for j in range(n_agents) if j != i]
            for t in range(n_steps) for i in range(n_agents)
        ]
        self.temporal_neighbors = [
            [s * n_agents + i for s in (t - 1, t + 1) if 0 <= s < n_steps]
            for t in range(n_steps) for i in range(n_agents)
        ]
        self.spatial_mean = _mean_matrix(self.spatial_neighbors)
        self.temporal_mean = _mean_matrix(self.temporal_neighbors)

    @property
    def n_vertices(self) -> int:
        return self.n_agents * self.n_steps

    def vertex(self, agent: int, t: int) -> int:
        """Canonical index of agent `agent` at 1-based step `t`."""
        return (t - 1) * self.n_agents + agent


def _mean_matrix(neighbor_lists) -> np.ndarray:
    """Row v holds 1/|neighbors| at each neighbor; an empty row aggregates to zero."""
    v = len(neighbor_lists)
    out = np.zeros((v, v))
    for i, ns in enumerate(neighbor_lists):
        if ns:
            out[i, ns] = 1.0 / len(ns)
    return out


def build_graph(decisions) -> SpatioTemporalGraph:
    """Assemble the graph from per-step, per-agent policy distributions.

    `decisions[t][i]` is agent i's length-N distribution at step t+1; the
    record must be rectangular.
    """
    arr = np.asarray(decisions, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"decisions must be (T', N, N), got {arr.shape}")
    n_steps, n_agents = arr.shape[0], arr.shape[1]
    features = arr.reshape(n_steps * n_agents, n_agents)
    return SpatioTemporalGraph(features, n_agents, n_steps)


class DualGCN:
    """K stacked dual-aggregation layers; widths all equal the action count."""

    def __init__(self, n_agents: int, n_layers: int, rng: np.random.Generator):
        if n_layers < 1:
            raise ValueError("need at least one layer")
        self.n_agents = n_agents
        self.n_layers = n_layers
        n = n_agents
        self.w_spatial = [ad.glorot(rng, n, n) for _ in range(n_layers)]
        self.w_temporal = [ad.glorot(rng, n, n) for _ in range(n_layers)]
        self.w_fuse = [ad.glorot(rng, 2 * n, n) for _ in range(n_layers)]

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for k in range(self.n_layers):
            out[f"w_spatial_{k}"] = self.w_spatial[k]
            out[f"w_temporal_{k}"] = self.w_temporal[k]
            out[f"w_fuse_{k}"] = self.w_fuse[k]
        return out

    def load_values(self, named: dict[str, np.ndarray]):
        for k, p in self.parameters().items():
            if k not in named:
                raise ValueError(f"checkpoint missing parameter {k}")
            if named[k].shape != p.value.shape:
                raise ValueError(f"checkpoint shape mismatch for {k}")
            p.value = named[k].astype(np.float64)

    def forward(self, graph: SpatioTemporalGraph) -> Tensor:
        """Advice distribution per vertex, shape (V, N)."""
        agg_s = Tensor(graph.spatial_mean)
        agg_t = Tensor(graph.temporal_mean)
        h = Tensor(graph.features)
        for k in range(self.n_layers):
            m_s = ad.matmul(agg_s, h)
            m_t = ad.matmul(agg_t, h)
            h_nbr = ad.add(ad.matmul(m_s, self.w_spatial[k]),
                           ad.matmul(m_t, self.w_temporal[k]))
            h = ad.relu(ad.matmul(ad.concat_cols(h, h_nbr), self.w_fuse[k]))
        return ad.softmax_rows(h)

    def advice(self, graph: SpatioTemporalGraph) -> np.ndarray:
        return self.forward(graph).value


def max_confidence_label(graph: SpatioTemporalGraph) -> np.ndarray:
    """1 where a vertex's preferred action beats every spatial neighbor's
    probability on that action, strictly; ties give 0."""
    feats = graph.features
    labels = np.zeros(graph.n_vertices)
    for v in range(graph.n_vertices):
        a = int(np.argmax(feats[v]))
        conf = feats[v, a]
        if all(conf > feats[w, a] for w in graph.spatial_neighbors[v]):
            labels[v] = 1.0
    return labels


def jsd_rows(p: Tensor, q: Tensor) -> Tensor:
    """Row-wise Jensen-Shannon divergence (natural log), shape (R, 1)."""
    m = ad.mul(ad.add(p, q), 0.5)
    log_m = ad.log(ad.clamp_prob(m))
    kl_pm = ad.row_sums(ad.mul(p, ad.sub(ad.log(ad.clamp_prob(p)), log_m)))
    kl_qm = ad.row_sums(ad.mul(q, ad.sub(ad.log(ad.clamp_prob(q)), log_m)))
    return ad.mul(ad.add(kl_pm, kl_qm), 0.5)


def _edge_mask(neighbor_lists) -> np.ndarray:
    v = len(neighbor_lists)
    out = np.zeros((v, v))
    for i, ns in enumerate(neighbor_lists):
        out[i, ns] = 1.0
    return out


def advisor_loss(gcn: DualGCN, graph: SpatioTemporalGraph,
                 boost_term: Tensor | None = None, mu: float = 0.3,
                 advice: Tensor | None = None) -> Tensor:
    """Temporal-similarity + spatial-distinctness + max-confidence consistency,
    optionally minus the discriminator boost (already sign-flipped) scaled by mu.
    """
    pi = gcn.forward(graph) if advice is None else advice
    inner = ad.matmul(pi, ad.transpose(pi))                       # (V, V)
    log_sig = ad.log(ad.clamp_prob(ad.sigmoid(inner)))
    log_sig_neg = ad.log(ad.clamp_prob(ad.sigmoid(ad.neg(inner))))
    mask_t = Tensor(_edge_mask(graph.temporal_neighbors))
    mask_s = Tensor(_edge_mask(graph.spatial_neighbors))
    temporal = ad.neg(ad.sum_all(ad.mul(log_sig, mask_t)))
    spatial = ad.neg(ad.sum_all(ad.mul(log_sig_neg, mask_s)))
    loss = ad.add(temporal, spatial)

    labels = max_confidence_label(graph)
    if labels.any():
        jsd = jsd_rows(pi, Tensor(graph.features))
        consistency = ad.sum_all(ad.mul(jsd, Tensor(labels[:, None])))
        loss = ad.add(loss, consistency)

    if boost_term is not None and mu > 0.0:
        loss = ad.add(loss, ad.mul(boost_term, mu))
    return loss


def train_advisor(gcn: DualGCN, optimizer: ad.Adam, graphs,
                  epochs: int, boost_builder=None, mu: float = 0.3) -> int:
    """Run `epochs` optimizer steps over all stored graphs.

    `boost_builder`, when given, receives {graph_id: advice Tensor} with live
    gradients and returns the summed per-agent discriminator term for Eq.-11
    style boosting. Returns the number of optimizer steps taken.
    """
    if not graphs:
        raise ValueError("empty graph buffer")
    items = list(graphs.items()) if isinstance(graphs, dict) else list(enumerate(graphs))
    for _ in range(epochs):
        total = None
        advice_map = {}
        for gid, graph in items:
            pi = gcn.forward(graph)
            advice_map[gid] = pi
            term = advisor_loss(gcn, graph, advice=pi)
            total = term if total is None else ad.add(total, term)
        if boost_builder is not None:
            boost = boost_builder(advice_map)
            if boost is not None:
                total = ad.add(total, ad.mul(boost, mu))
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
    return epochs


# -- debug serialization ------------------------------------------------------

def graph_to_bytes(graph: SpatioTemporalGraph) -> bytes:
    """Compact binary record: counts, both edge lists, then the feature matrix."""
    parts = [struct.pack("<III", graph.n_agents, graph.n_steps, graph.n_vertices)]
    for lists in (graph.spatial_neighbors, graph.temporal_neighbors):
        edges = [(v, u) for v, ns in enumerate(lists) for u in ns]
        parts.append(struct.pack("<I", len(edges)))
        for v, u in edges:
            parts.append(struct.pack("<II", v, u))
    parts.append(graph.features.astype("<f8").tobytes(order="C"))
    return b"".join(parts)


def graph_from_bytes(blob: bytes) -> SpatioTemporalGraph:
    n_agents, n_steps, n_vertices = struct.unpack_from("<III", blob, 0)
    offset = 12
    for _ in range(2):  # edge lists are recomputable from (N, T'); skip past them
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4 + 8 * count
    features = np.frombuffer(blob, dtype="<f8", offset=offset,
                             count=n_vertices * n_agents).reshape(n_vertices, n_agents)
    return SpatioTemporalGraph(features.copy(), n_agents, n_steps)
