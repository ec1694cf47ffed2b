"""Edge-gated graph encoder over mini-batch subgraphs.

Structure enters the encoder only through a per-node, per-dimension
gate: each node's incident relations are summarized, projected, summed
over its neighbors via the adjacency matrix, and squashed by a sigmoid.
Attention itself runs unmasked over every node in the batch.  Between
layers the relation embeddings are nudged by the current gate and the
gate is recomputed, so deeper layers see updated relation semantics.

Node features start from the historical store: x0 rows are data (no
gradient), mapped through the learned W_dist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .batching import MiniBatch
from .kg import GraphPair
from .tensor import Tensor, segment_mean, sigmoid

N_LAYERS = 3


def create_neighbor_params(store: nn.ParameterStore, d: int, rng: np.random.Generator,
                           n_layers: int = N_LAYERS) -> None:
    store.create("nei.W_r", nn.xavier_uniform(rng, d, d))
    store.create("nei.W_rprime", nn.xavier_uniform(rng, d, d))
    store.create("hist.W_dist", nn.xavier_uniform(rng, d, d))
    for k in range(n_layers):
        nn.create_attention(store, f"nei.att{k}", d, rng)


@dataclass
class SubgraphTensors:
    """Structural arrays for one mini-batch subgraph.

    `adj` is the symmetrized 0/1 adjacency over batch-local node
    indices with zero diagonal.  `entry_node[e]` / `entry_pred[e]`
    enumerate (node, incident predicate) pairs over the subgraph's edge
    list; `entry_pred` indexes `uniq_preds`, which holds the global
    predicate ids present.
    """

    ids: np.ndarray  # global entity ids, core first
    n_core: int
    adj: np.ndarray  # [n, n]
    entry_node: np.ndarray
    entry_pred: np.ndarray
    uniq_preds: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_pred: np.ndarray
    edge_dir: list[str]

    @property
    def n_nodes(self) -> int:
        return len(self.ids)


def subgraph_tensors(mb: MiniBatch, pair: GraphPair) -> SubgraphTensors:
    n = len(mb.nodes)
    adj = np.zeros((n, n))
    adj[mb.edge_src, mb.edge_dst] = 1.0
    np.fill_diagonal(adj, 0.0)
    uniq_preds, entry_pred = np.unique(mb.edge_pred, return_inverse=True)
    return SubgraphTensors(
        ids=mb.global_ids(pair),
        n_core=mb.n_core,
        adj=adj,
        entry_node=mb.edge_src.copy(),
        entry_pred=entry_pred,
        uniq_preds=uniq_preds,
        edge_src=mb.edge_src,
        edge_dst=mb.edge_dst,
        edge_pred=mb.edge_pred,
        edge_dir=mb.edge_dir,
    )


class HistoricalEmbeddingStore:
    """Per-entity embedding rows carried across training iterations."""

    def __init__(self, n_entities: int, d: int):
        self.x0 = np.zeros((n_entities, d))

    def fetch(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.x0.shape[0]):
            raise ValueError("historical store: unknown entity id")
        return self.x0[ids]

    def update(self, ids: np.ndarray, values: np.ndarray) -> None:
        ids = np.asarray(ids, dtype=np.intp)
        values = np.asarray(values, dtype=np.float64)
        if ids.shape[0] != values.shape[0] or values.shape[1] != self.x0.shape[1]:
            raise ValueError("historical store: id/value shape mismatch")
        if ids.size and (ids.min() < 0 or ids.max() >= self.x0.shape[0]):
            raise ValueError("historical store: unknown entity id")
        self.x0[ids] = values


def approximate_history(ids: np.ndarray, hist: HistoricalEmbeddingStore,
                        store: nn.ParameterStore) -> Tensor:
    """x_HE = x0 rows mapped through W_dist; gradient reaches W_dist only."""
    rows = Tensor(hist.fetch(ids))  # constant: x0 is data, not a parameter
    return rows @ store["hist.W_dist"]


def relation_summary(sub: SubgraphTensors, rel: Tensor) -> Tensor:
    """Per-node mean of incident relation embeddings; isolated rows are 0."""
    if sub.entry_node.size == 0:
        return Tensor(np.zeros((sub.n_nodes, rel.shape[-1])))
    gathered = rel.take_rows(sub.entry_pred)
    return segment_mean(gathered, sub.entry_node, sub.n_nodes)


def compute_gate(sub: SubgraphTensors, rel: Tensor, store: nn.ParameterStore) -> Tensor:
    """gamma = sigmoid(A @ (R_in @ W_r)), per node and dimension."""
    r_in = relation_summary(sub, rel)
    return sigmoid(Tensor(sub.adj) @ (r_in @ store["nei.W_r"]))


def update_relations(gamma: Tensor, rel: Tensor, sub: SubgraphTensors,
                     store: nn.ParameterStore) -> Tensor:
    """r' = r + gamma_p * (r @ W_r'); gamma_p averages gate rows of
    nodes incident to each predicate."""
    if sub.entry_node.size == 0:
        return rel
    gam_rows = gamma.take_rows(sub.entry_node)
    gamma_p = segment_mean(gam_rows, sub.entry_pred, rel.shape[0])
    return rel + gamma_p * (rel @ store["nei.W_rprime"])


@dataclass
class NeighborEncoding:
    """Forward results for one subgraph.

    `states[0]` is the gated historical input; `states[k]` (k >= 1) is
    layer k's output, so loss terms pair states[k-1] with states[k].
    """

    ids: np.ndarray
    n_core: int
    states: list[Tensor]  # K+1 tensors [n, d]
    gammas: list[Tensor]  # K+1 gates
    alpha: np.ndarray  # [n, n] layer- and head-averaged attention

    @property
    def h_nei(self) -> Tensor:
        return self.states[-1]


def encode_subgraph(
    sub: SubgraphTensors,
    hist: HistoricalEmbeddingStore,
    store: nn.ParameterStore,
    pred_emb: Tensor,
    heads: int,
    n_layers: int = N_LAYERS,
) -> NeighborEncoding:
    if sub.n_nodes < 1:
        raise ValueError("subgraph must contain at least one node")
    x_he = approximate_history(sub.ids, hist, store)
    rel = pred_emb.take_rows(sub.uniq_preds) if sub.uniq_preds.size else Tensor(
        np.zeros((0, x_he.shape[-1]))
    )
    gamma = compute_gate(sub, rel, store)
    states = [gamma * x_he]
    gammas = [gamma]
    alphas = []
    n, d = x_he.shape
    for k in range(n_layers):
        y, alpha = nn.attention_block(
            states[-1].reshape(1, n, d), store, f"nei.att{k}", heads
        )
        alphas.append(alpha.data[0])
        if sub.uniq_preds.size:
            rel = update_relations(gamma, rel, sub, store)
        gamma = compute_gate(sub, rel, store)
        gammas.append(gamma)
        states.append(gamma * y.reshape(n, d))
    return NeighborEncoding(
        ids=sub.ids,
        n_core=sub.n_core,
        states=states,
        gammas=gammas,
        alpha=np.mean(alphas, axis=0),
    )


def update_store(hist: HistoricalEmbeddingStore, enc: NeighborEncoding) -> None:
    """Write final-layer embeddings of CORE nodes back to the store."""
    core_ids = enc.ids[: enc.n_core]
    hist.update(core_ids, enc.h_nei.data[: enc.n_core])
