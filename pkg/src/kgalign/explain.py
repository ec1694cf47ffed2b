"""Attention-based explanations, Jaccard consistency, and removal analysis.

An entity's explanation has two columns: its top attributes by the
attribute aggregator's summary-attention importance, and its top
neighbors by the graph encoder's attention row restricted to true 1-hop
neighbors (the batch attention also spans non-neighbors, which never
appear in a rendered explanation) and renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ck
from .alignment import EntityEmbeddingTable
from .kg import ATTR, REL, GraphPair, KnowledgeGraph, OUT
from .model import AlignmentModel


@dataclass
class SideExplanation:
    entity: int
    label: str
    attributes: list[tuple[str, str, float]]  # (key, value, weight)
    neighbors: list[tuple[str, str, float]]   # (relation, neighbor label, weight)


@dataclass
class Explanation:
    pair_id: str
    score: float
    a: SideExplanation
    b: SideExplanation

    def to_json(self) -> dict:
        def side(s: SideExplanation) -> dict:
            return {
                "entity": s.label,
                "attributes": [[k, v, w] for k, v, w in s.attributes],
                "neighbors": [[r, l, w] for r, l, w in s.neighbors],
            }

        return {
            "pair_id": self.pair_id,
            "score": self.score,
            "a": side(self.a),
            "b": side(self.b),
        }


class Explainer:
    """Inference with attention capture, one forward per mini-batch.

    Serves embeddings, per-entity explanations, and the top-1 feature
    handles the removal analysis needs.  Read-only over the model.
    """

    def __init__(self, model: AlignmentModel, cfg):
        from .training import side_batches

        self.model = model
        self.pair = model.pair
        self._batches = {side: side_batches(self.pair, side, cfg) for side in "AB"}
        self._where = {
            side: {int(v): bi for bi, mb in enumerate(bs) for v in mb.core}
            for side, bs in self._batches.items()
        }
        self._cache: dict[tuple[str, int], tuple] = {}

    @classmethod
    def from_checkpoint(cls, ckpt: ck.Checkpoint, pair: GraphPair) -> "Explainer":
        from .training import TrainConfig

        model = ck.model_from_checkpoint(ckpt, pair)
        return cls(model, TrainConfig(**ckpt.config))

    def _forward(self, side: str, bi: int):
        key = (side, bi)
        if key not in self._cache:
            mb = self._batches[side][bi]
            h, attr, nei = self.model.encode_batch(mb)
            self._cache[key] = (mb, h.data, attr.importance, nei.alpha)
        return self._cache[key]

    def _entity_slot(self, side: str, v: int):
        bi = self._where[side][int(v)]
        mb, h, importance, alpha = self._forward(side, bi)
        i = int(np.flatnonzero(mb.core == v)[0])
        return mb, h, importance[i], alpha[i], i

    def embedding(self, side: str, v: int) -> np.ndarray:
        _, h, _, _, i = self._entity_slot(side, v)
        return h[i]

    def tables(self) -> tuple[EntityEmbeddingTable, EntityEmbeddingTable]:
        out = []
        for side in "AB":
            kg = self.pair.graph(side)
            vectors = np.zeros((len(kg.entities), 2 * self.model.d))
            for bi, mb in enumerate(self._batches[side]):
                _, h, _, _ = self._forward(side, bi)
                vectors[mb.core] = h
            out.append(EntityEmbeddingTable(graph_id=kg.id, vectors=vectors))
        return out[0], out[1]

    # -- per-entity feature weights -------------------------------------------

    def attribute_weights(self, side: str, v: int) -> list[tuple[int, str, float]]:
        """(local predicate id, literal, weight), descending weight."""
        kg = self.pair.graph(side)
        slots = kg.attrs_of[int(v)]
        if not slots:
            return []
        mb, _, imp, _, i = self._entity_slot(side, v)
        items = [(slots[pos][0], slots[pos][1], float(w)) for pos, w in imp]
        items.sort(key=lambda t: (-t[2], t[0], t[1]))
        return items

    def neighbor_weights(self, side: str, v: int) -> list[tuple[int, int, str, float]]:
        """(neighbor id, relation id, direction, weight) over true 1-hop
        neighbors, renormalized; descending weight."""
        kg = self.pair.graph(side)
        first_edge: dict[int, tuple[int, str]] = {}
        for u, p, direction in kg.adjacency[int(v)]:
            if u != v and u not in first_edge:
                first_edge[u] = (p, direction)
        if not first_edge:
            return []
        mb, _, _, alpha_row, i = self._entity_slot(side, v)
        weights = {u: float(alpha_row[mb.local[u]]) for u in first_edge}
        total = sum(weights.values())
        if total > 0.0:
            weights = {u: w / total for u, w in weights.items()}
        items = [(u, first_edge[u][0], first_edge[u][1], w)
                 for u, w in weights.items()]
        items.sort(key=lambda t: (-t[3], t[0]))
        return items

    def side_explanation(self, side: str, v: int, top_n: int = 5) -> SideExplanation:
        kg = self.pair.graph(side)
        attrs = [
            (kg.predicates.name(p), lit, w)
            for p, lit, w in self.attribute_weights(side, v)[:top_n]
        ]
        neighbors = [
            (kg.predicates.name(p), kg.entities.name(u), w)
            for u, p, _, w in self.neighbor_weights(side, v)[:top_n]
        ]
        return SideExplanation(entity=int(v), label=kg.entities.name(int(v)),
                               attributes=attrs, neighbors=neighbors)

    def explain_pair(self, va: int, vb: int, top_n: int = 5,
                     pair_id: str | None = None) -> Explanation:
        ea = self.embedding("A", va)
        eb = self.embedding("B", vb)
        na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
        score = float(ea @ eb / (na * nb)) if na > 0 and nb > 0 else 0.0
        if pair_id is None:
            pair_id = f"{self.pair.a.entities.name(int(va))}|{self.pair.b.entities.name(int(vb))}"
        return Explanation(
            pair_id=pair_id,
            score=score,
            a=self.side_explanation("A", va, top_n),
            b=self.side_explanation("B", vb, top_n),
        )


# -- Jaccard consistency ---------------------------------------------------------


def _canon(item: tuple, norm: dict[str, str]) -> tuple:
    return tuple(norm.get(x, x) for x in item)


def jaccard_sets(set_a: set, set_b: set) -> float:
    if not set_a and not set_b:
        return 1.0
    inter = len(set_a & set_b)
    union = len(set_a | set_b)
    return inter / union


def jaccard_explanations(explanations: list[Explanation],
                         norm: dict[str, str] | None = None) -> tuple[float, float]:
    """Mean Jaccard between the two sides' attribute sets and neighbor sets.

    `norm` maps predicate/value spellings to a canonical form before
    comparison (the usual way to reconcile schema differences).
    """
    if not explanations:
        raise ValueError("no explanations")
    norm = norm or {}
    attr_scores = []
    nei_scores = []
    for ex in explanations:
        sa = {_canon((k, v), norm) for k, v, _ in ex.a.attributes}
        sb = {_canon((k, v), norm) for k, v, _ in ex.b.attributes}
        attr_scores.append(jaccard_sets(sa, sb))
        na = {_canon((r, l), norm) for r, l, _ in ex.a.neighbors}
        nb = {_canon((r, l), norm) for r, l, _ in ex.b.neighbors}
        nei_scores.append(jaccard_sets(na, nb))
    return float(np.mean(attr_scores)), float(np.mean(nei_scores))


# -- feature-removal analysis ----------------------------------------------------


def filtered_copy(kg: KnowledgeGraph, drop_rel: set[tuple[int, int, int]],
                  drop_attr: set[tuple[int, int, str]]) -> KnowledgeGraph:
    """Copy of the graph minus the given triples, intern tables shared
    (so checkpoints trained on the original still bind)."""
    out = KnowledgeGraph(kg.id)
    out.entities = kg.entities
    out.predicates = kg.predicates
    out.rel_triples = [t for t in kg.rel_triples if t not in drop_rel]
    out.attr_triples = [t for t in kg.attr_triples if t not in drop_attr]
    out._order = [(REL, i) for i in range(len(out.rel_triples))] + [
        (ATTR, i) for i in range(len(out.attr_triples))
    ]
    out._finalize()
    return out


def removal_analysis(
    ckpt: ck.Checkpoint,
    kg_a: KnowledgeGraph,
    kg_b: KnowledgeGraph,
    test_pairs: list[tuple[int, int]],
    runs: int = 5,
    mode: str = "attributes",
    top_n: int = 5,
    norm: dict[str, str] | None = None,
) -> list[dict]:
    """Iterated top-feature removal (run 1 = untouched baseline).

    Each intermediate run removes every entity's current top-1 feature
    of the chosen kind from the data and re-runs inference; the final
    run removes all features of that kind.  Returns one row per run with
    Hits@1 over `test_pairs` and the mean explanation Jaccard.
    """
    from .alignment import hits_at_k, predict
    from .training import TrainConfig

    if mode not in ("attributes", "neighbors", "both"):
        raise ValueError(f"unknown removal mode {mode!r}")
    if runs < 2:
        raise ValueError("removal analysis needs at least 2 runs")
    cfg = TrainConfig(**ckpt.config)
    queries = [p[0] for p in test_pairs]
    cands = [p[1] for p in test_pairs]
    gold = dict(test_pairs)

    drops = {"A": {"rel": set(), "attr": set()}, "B": {"rel": set(), "attr": set()}}
    rows: list[dict] = []
    for run in range(1, runs + 1):
        if run == runs:  # final run: everything of the kind goes
            for side, kg in (("A", kg_a), ("B", kg_b)):
                if mode in ("attributes", "both"):
                    drops[side]["attr"].update(kg.attr_triples)
                if mode in ("neighbors", "both"):
                    drops[side]["rel"].update(kg.rel_triples)
        cur_a = filtered_copy(kg_a, drops["A"]["rel"], drops["A"]["attr"])
        cur_b = filtered_copy(kg_b, drops["B"]["rel"], drops["B"]["attr"])
        pair = GraphPair(cur_a, cur_b)
        model = ck.model_from_checkpoint(ckpt, pair)
        ex = Explainer(model, cfg)
        ta, tb = ex.tables()
        preds = predict(ta, tb, queries, cands, k=1, gold=gold)
        expls = [ex.explain_pair(va, vb, top_n=top_n) for va, vb in test_pairs]
        j_attr, j_nei = jaccard_explanations(expls, norm)
        rows.append({
            "run": run,
            "hits_at_1": hits_at_k(preds, 1),
            "jaccard_attributes": j_attr,
            "jaccard_neighbors": j_nei,
        })
        if run == runs:
            break
        # queue next run's removals: current top-1 feature per entity
        for side, kg in (("A", cur_a), ("B", cur_b)):
            n = len(kg.entities)
            if mode in ("attributes", "both"):
                for v in range(n):
                    items = ex.attribute_weights(side, v)
                    if items:
                        p, lit, _ = items[0]
                        drops[side]["attr"].add((v, p, lit))
            if mode in ("neighbors", "both"):
                for v in range(n):
                    items = ex.neighbor_weights(side, v)
                    if items:
                        u, p, direction, _ = items[0]
                        triple = (v, p, u) if direction == OUT else (u, p, v)
                        drops[side]["rel"].add(triple)
    return rows
