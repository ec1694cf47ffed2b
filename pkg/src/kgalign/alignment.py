"""Full-graph inference, alignment prediction, and Hits@k.

Inference replays the training batch layout (same partitioner, same
seed) with the historical store read-only, so every entity's embedding
comes from the one batch where it is a core node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ck
from .kg import GraphPair
from .model import AlignmentModel


@dataclass
class EntityEmbeddingTable:
    graph_id: str
    vectors: np.ndarray  # [n_entities, 2d]


@dataclass
class AlignmentPrediction:
    query: int
    candidates: list[int]     # top-k candidate entity ids, best first
    scores: list[float]
    gold_rank: int | None     # 1-based rank of the gold candidate, if known


def embed_all(pair: GraphPair, side: str, ckpt: ck.Checkpoint,
              model: AlignmentModel | None = None) -> EntityEmbeddingTable:
    """Embed every entity of one side under a checkpoint.

    The store is only read: batches see the checkpoint's historical
    embeddings for their halo, exactly as a training forward would.
    """
    from .training import TrainConfig, side_batches

    if model is None:
        model = ck.model_from_checkpoint(ckpt, pair)
    else:
        ck.check_hashes(ckpt, pair.a, pair.b)
    cfg = TrainConfig(**ckpt.config)
    kg = pair.graph(side)
    vectors = np.zeros((len(kg.entities), 2 * model.d))
    for mb in side_batches(pair, side, cfg):
        h, _, _ = model.encode_batch(mb)
        vectors[mb.core] = h.data
    return EntityEmbeddingTable(graph_id=kg.id, vectors=vectors)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 0.0, x / np.where(norms > 0.0, norms, 1.0), 0.0)


def similarity_matrix(table_a: EntityEmbeddingTable, table_b: EntityEmbeddingTable,
                      queries: np.ndarray, candidates: np.ndarray,
                      metric: str = "cosine") -> np.ndarray:
    """[n_queries, n_candidates] score matrix, higher = more similar."""
    qa = table_a.vectors[queries]
    cb = table_b.vectors[candidates]
    if metric == "cosine":
        return _unit_rows(qa) @ _unit_rows(cb).T
    if metric == "l2":
        d2 = (np.sum(qa * qa, axis=1)[:, None] + np.sum(cb * cb, axis=1)[None, :]
              - 2.0 * (qa @ cb.T))
        return -np.sqrt(np.maximum(d2, 0.0))
    raise ValueError(f"unknown metric {metric!r}")


def predict(table_a: EntityEmbeddingTable, table_b: EntityEmbeddingTable,
            queries: list[int], candidates: list[int], k: int = 10,
            gold: dict[int, int] | None = None,
            metric: str = "cosine") -> list[AlignmentPrediction]:
    """Rank candidates for each query; ties break by ascending entity id."""
    if not candidates:
        raise ValueError("candidate set must be nonempty")
    q = np.asarray(queries, dtype=np.int64)
    c = np.asarray(candidates, dtype=np.int64)
    sim = similarity_matrix(table_a, table_b, q, c, metric=metric)
    out: list[AlignmentPrediction] = []
    for i, v in enumerate(q):
        order = np.lexsort((c, -sim[i]))
        ranked = c[order]
        gold_rank = None
        if gold is not None and int(v) in gold:
            pos = np.flatnonzero(ranked == gold[int(v)])
            gold_rank = int(pos[0]) + 1 if pos.size else None
        top = order[:k]
        out.append(AlignmentPrediction(
            query=int(v),
            candidates=[int(x) for x in c[top]],
            scores=[float(s) for s in sim[i][top]],
            gold_rank=gold_rank,
        ))
    return out


def hits_at_k(predictions: list[AlignmentPrediction], k: int) -> float:
    """Percentage of queries whose gold candidate ranks in the top k."""
    if not predictions:
        raise ValueError("no predictions")
    for p in predictions:
        if p.gold_rank is None:
            raise ValueError(f"query {p.query} has no gold rank")
    hit = sum(1 for p in predictions if p.gold_rank <= k)
    return 100.0 * hit / len(predictions)


def format_hits(value: float) -> str:
    return f"{value:.2f}"
