"""Ties the two encoders into one alignment model over a graph pair.

An entity's embedding is the concatenation of its attribute encoding
and its neighborhood encoding.  Entities outside the current mini-batch
still get embeddings: attributes are recomputed (cheap, per-entity) and
the neighborhood half is approximated from the historical store.
"""

from __future__ import annotations

import numpy as np

from . import attribute_encoder as ae
from . import neighbor_encoder as ne
from . import nn
from .batching import MiniBatch
from .kg import GraphPair
from .tensor import Tensor, concat, narrow_rows


class AlignmentModel:
    def __init__(self, pair: GraphPair, d: int = 256, d_c: int = 64,
                 heads: int = 8, layers: int = 3, rng_seed: int = 0):
        self.pair = pair
        self.d = d
        self.d_c = d_c
        self.heads = heads
        self.layers = layers
        self.store = nn.ParameterStore()
        rng = np.random.default_rng(rng_seed)
        ae.create_attr_params(self.store, d, d_c, rng, n_layers=layers)
        ne.create_neighbor_params(self.store, d, rng, n_layers=layers)
        # shared predicate table; extra final row is the NO_ATTR pseudo-key
        self.store.create("pred_emb", nn.embedding_init(rng, pair.n_predicates + 1, d))
        self.no_attr_pred = pair.n_predicates
        self.hist = ne.HistoricalEmbeddingStore(pair.n_entities, d)

    # -- forward passes -----------------------------------------------------

    def encode_attributes(self, slots: list[list[tuple[int, str]]]) -> ae.AttributeEncoding:
        batch = ae.build_slot_batch(slots, no_attr_pred=self.no_attr_pred)
        return ae.aggregate_attributes(batch, self.store, self.store["pred_emb"],
                                       self.heads, n_layers=self.layers)

    def slots_for(self, side: str, ids: np.ndarray) -> list[list[tuple[int, str]]]:
        kg = self.pair.graph(side)
        return [
            [(self.pair.global_pred(side, p), lit) for p, lit in kg.attrs_of[int(v)]]
            for v in ids
        ]

    def encode_neighbors(self, mb: MiniBatch) -> ne.NeighborEncoding:
        sub = ne.subgraph_tensors(mb, self.pair)
        return ne.encode_subgraph(sub, self.hist, self.store, self.store["pred_emb"],
                                  self.heads, n_layers=self.layers)

    def encode_batch(self, mb: MiniBatch):
        """Full embeddings for a mini-batch's core entities.

        Returns (h [n_core, 2d], attribute encoding, neighbor encoding).
        """
        attr = self.encode_attributes(mb.attr_slots)
        nei = self.encode_neighbors(mb)
        h_nei_core = narrow_rows(nei.h_nei, 0, mb.n_core)
        h = concat([attr.h_att, h_nei_core], axis=-1)
        return h, attr, nei

    def approx_embeddings(self, side: str, ids: np.ndarray) -> Tensor:
        """Embeddings for entities outside the current batch: fresh
        attribute pass, historical approximation for the neighbor half."""
        attr = self.encode_attributes(self.slots_for(side, ids))
        gids = np.asarray([self.pair.global_entity(side, int(v)) for v in ids])
        x_he = ne.approximate_history(gids, self.hist, self.store)
        return concat([attr.h_att, x_he], axis=-1)
