"""Attribute aggregator: entity embeddings from attribute triples.

Literal values pass through a character-level GRU, get fused with their
attribute-key embedding, and the resulting slot sequence (prefixed by a
learned SUMMARY slot) runs through stacked self-attention.  The final
SUMMARY row is the entity's attribute embedding; the SUMMARY row of the
attention matrix, restricted to real slots and averaged over layers,
is the per-attribute importance used by explanations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .tensor import Tensor, concat, tanh

CHAR_VOCAB = 512  # id 0 reserved for empty/overflow, others bucketed
MAX_SLOTS = 32
N_LAYERS = 3


def char_ids(literal: str, max_len: int = 64) -> np.ndarray:
    """Bucket code points into the fixed vocabulary; empty -> [0]."""
    if not literal:
        return np.array([0], dtype=np.intp)
    return np.array([1 + (ord(c) % (CHAR_VOCAB - 1)) for c in literal[:max_len]], dtype=np.intp)


def create_attr_params(store: nn.ParameterStore, d: int, d_c: int,
                       rng: np.random.Generator, n_layers: int = N_LAYERS) -> None:
    store.create("attr.char_emb", nn.embedding_init(rng, CHAR_VOCAB, d_c))
    nn.create_gru(store, "attr.gru", d_c, d_c, rng)
    store.create("attr.W_a", nn.xavier_uniform(rng, d, d))
    store.create("attr.W_l", nn.xavier_uniform(rng, d_c, d))
    store.create("attr.summary", nn.embedding_init(rng, 1, d))
    for k in range(n_layers):
        nn.create_attention(store, f"attr.att{k}", d, rng)


@dataclass
class AttributeSlotBatch:
    """Padded slot arrays for a batch of entities.

    `lit_idx` indexes the deduplicated literal list so each distinct
    string is GRU-encoded once.  Entities with no attributes carry a
    single pseudo-slot (NO_ATTR predicate row, empty literal); `pseudo`
    marks them.  `input_pos[i][k]` maps kept slot k of entity i back to
    its position in the caller's slot list.
    """

    pred_ids: np.ndarray  # [B, S]
    lit_idx: np.ndarray  # [B, S]
    real: np.ndarray  # [B, S] bool, True = real (non-pad) slot
    literals: list[str]  # deduplicated
    input_pos: list[list[int]]
    pseudo: list[bool]

    @property
    def n_entities(self) -> int:
        return self.pred_ids.shape[0]


def build_slot_batch(
    entity_slots: list[list[tuple[int, str]]],
    no_attr_pred: int,
    max_slots: int = MAX_SLOTS,
) -> AttributeSlotBatch:
    """entity_slots: per entity, (predicate-id, literal) in input order."""
    kept: list[list[tuple[int, str]]] = []
    input_pos: list[list[int]] = []
    pseudo: list[bool] = []
    for slots in entity_slots:
        if len(slots) > max_slots:
            sel = sorted(range(len(slots)), key=lambda k: (slots[k][0], k))[:max_slots]
            sel.sort()
        else:
            sel = list(range(len(slots)))
        if sel:
            kept.append([slots[k] for k in sel])
            input_pos.append(sel)
            pseudo.append(False)
        else:
            kept.append([(no_attr_pred, "")])
            input_pos.append([0])
            pseudo.append(True)

    uniq: dict[str, int] = {"": 0}
    s_max = max(len(s) for s in kept)
    b = len(kept)
    pred_ids = np.full((b, s_max), no_attr_pred, dtype=np.intp)
    lit_idx = np.zeros((b, s_max), dtype=np.intp)
    real = np.zeros((b, s_max), dtype=bool)
    for i, slots in enumerate(kept):
        for k, (p, lit) in enumerate(slots):
            pred_ids[i, k] = p
            lit_idx[i, k] = uniq.setdefault(lit, len(uniq))
            real[i, k] = True
    literals = [""] * len(uniq)
    for s, j in uniq.items():
        literals[j] = s
    return AttributeSlotBatch(pred_ids, lit_idx, real, literals, input_pos, pseudo)


@dataclass
class AttributeEncoding:
    h_att: Tensor  # [B, d]
    importance: list[list[tuple[int, float]]]  # per entity (input slot, weight)


def encode_literal(chars: np.ndarray, store: nn.ParameterStore) -> Tensor:
    """Single literal -> GRU final state [d_c]."""
    emb = store["attr.char_emb"].take_rows(np.asarray(chars, dtype=np.intp))
    return nn.gru_sequence(emb, store, "attr.gru")


def fuse_key_value(a_emb: Tensor, l_emb: Tensor, store: nn.ParameterStore) -> Tensor:
    """x_att = tanh(W_a-projected key + W_l-projected literal)."""
    a2 = a_emb.reshape(1, a_emb.shape[-1]) if a_emb.data.ndim == 1 else a_emb
    l2 = l_emb.reshape(1, l_emb.shape[-1]) if l_emb.data.ndim == 1 else l_emb
    out = tanh(a2 @ store["attr.W_a"] + l2 @ store["attr.W_l"])
    if a_emb.data.ndim == 1:
        return out.reshape(out.shape[-1])
    return out


def _encode_unique_literals(batch: AttributeSlotBatch, store: nn.ParameterStore) -> Tensor:
    seqs = [char_ids(lit) for lit in batch.literals]
    lengths = np.array([len(s) for s in seqs])
    l_max = lengths.max()
    ids = np.zeros((len(seqs), l_max), dtype=np.intp)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    emb = store["attr.char_emb"].take_rows(ids)  # [U, L, d_c]
    return nn.gru_batch(emb, lengths, store, "attr.gru")  # [U, d_c]


def aggregate_attributes(
    batch: AttributeSlotBatch,
    store: nn.ParameterStore,
    pred_emb: Tensor,
    heads: int,
    n_layers: int = N_LAYERS,
) -> AttributeEncoding:
    """Per-entity attribute embedding plus slot importance weights."""
    bsz, s_max = batch.pred_ids.shape
    lit_vecs = _encode_unique_literals(batch, store)  # [U, d_c]
    l_emb = lit_vecs.take_rows(batch.lit_idx)  # [B, S, d_c]
    a_emb = pred_emb.take_rows(batch.pred_ids)  # [B, S, d]
    x = tanh(a_emb @ store["attr.W_a"] + l_emb @ store["attr.W_l"])

    summary = store["attr.summary"].take_rows(np.zeros((bsz, 1), dtype=np.intp))
    h = concat([summary, x], axis=1)  # [B, S+1, d]
    key_mask = np.concatenate([np.ones((bsz, 1), dtype=bool), batch.real], axis=1)

    alphas = []
    for k in range(n_layers):
        h, alpha = nn.attention_block(h, store, f"attr.att{k}", heads, key_mask=key_mask)
        alphas.append(alpha.data[:, 0, 1:])  # SUMMARY row over attribute slots

    h_att = nn.slice_time(h, 0)  # [B, d]

    n_real = np.maximum(batch.real.sum(axis=1, keepdims=True), 1)
    w = np.zeros((bsz, s_max))
    for layer_w in alphas:
        lw = np.where(batch.real, layer_w, 0.0)
        s = lw.sum(axis=1, keepdims=True)
        # rows whose mass all went to the summary slot carry no signal;
        # fall back to uniform over the real slots instead of 0/0
        uniform = batch.real / n_real
        lw = np.where(s > 0.0, lw / np.where(s > 0.0, s, 1.0), uniform)
        w += lw
    w /= len(alphas)

    importance: list[list[tuple[int, float]]] = []
    for i in range(bsz):
        ks = np.flatnonzero(batch.real[i])
        importance.append([(batch.input_pos[i][k], float(w[i, k])) for k in ks])
    return AttributeEncoding(h_att=h_att, importance=importance)
