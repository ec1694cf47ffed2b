"""Losses, negative sampling, and the epoch loop.

The objective is an unweighted sum of four terms: a margin ranking loss
over seed alignments (with sampled negatives), two distillation losses
tying the historical store to the live encoders, and an L2 penalty on
each graph-encoder layer's output.  Entities referenced by the loss but
outside the current mini-batch get approximate embeddings (fresh
attribute pass + historical neighbor half) instead of a full forward.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import checkpoint as ck
from . import neighbor_encoder as ne
from . import nn
from .batching import MiniBatch, assemble_batch, default_num_parts, pair_parts, partition_graph
from .kg import GraphPair, KnowledgeGraph, SeedAlignment
from .model import AlignmentModel
from .tensor import (
    NonFiniteError,
    Tensor,
    concat,
    narrow_rows,
    relu,
    rows_cosine,
    rows_l2norm,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 400
    margin: float = 1.0
    negatives: int = 5
    d: int = 256
    d_c: int = 64
    layers: int = 3
    heads: int = 8
    lr: float = 1e-3
    lambda_reg: float = 1e-3
    rng_seed: int = 0
    num_parts: int | None = None
    warmup_epochs: int = 1
    # term weights; the default objective is the plain unweighted sum
    w_align: float = 1.0
    w_he1: float = 1.0
    w_he2: float = 1.0
    w_reg: float = 1.0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("margin", "negatives", "d", "d_c", "layers", "heads",
                     "lr", "lambda_reg", "warmup_epochs",
                     "w_align", "w_he1", "w_he2", "w_reg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_parts is not None and self.num_parts < 1:
            raise ValueError("num_parts must be >= 1 when given")
        if self.d % self.heads != 0:
            raise ValueError("d must be divisible by heads")


# -- negative sampling ---------------------------------------------------------


def sample_negatives(
    positives: list[tuple[int, int]],
    pool_a: np.ndarray,
    pool_b: np.ndarray,
    n_negatives: int,
    rng: np.random.Generator,
) -> list[list[tuple[int, int]]]:
    """Corrupt each positive pair n_negatives times.

    For each negative one side is chosen uniformly and its entity is
    replaced by a uniform draw from that graph's pool, resampling when
    the draw equals the entity it replaces.
    """
    pool_a = np.asarray(pool_a)
    pool_b = np.asarray(pool_b)
    if len(pool_a) < 2 or len(pool_b) < 2:
        raise ValueError("negative sampling needs at least 2 candidates per side")
    out: list[list[tuple[int, int]]] = []
    for va, vb in positives:
        negs: list[tuple[int, int]] = []
        for _ in range(n_negatives):
            if rng.integers(2) == 0:
                cand = int(pool_a[rng.integers(len(pool_a))])
                while cand == va:
                    cand = int(pool_a[rng.integers(len(pool_a))])
                negs.append((cand, vb))
            else:
                cand = int(pool_b[rng.integers(len(pool_b))])
                while cand == vb:
                    cand = int(pool_b[rng.integers(len(pool_b))])
                negs.append((va, cand))
        out.append(negs)
    return out


# -- losses --------------------------------------------------------------------


def margin_loss(pos_a: Tensor, pos_b: Tensor, neg_a: Tensor, neg_b: Tensor,
                margin: float) -> Tensor:
    """Sum of max(0, margin + f(pos) - f(neg)) with f the pairwise L2 distance.

    neg rows are grouped per positive: neg_a has P*N rows for P positives.
    """
    n_pos = pos_a.data.shape[0]
    if neg_a.data.shape[0] % n_pos != 0:
        raise ValueError("negative rows must be a multiple of positive rows")
    n_neg = neg_a.data.shape[0] // n_pos
    f_pos = rows_l2norm(pos_a - pos_b).reshape((n_pos, 1))
    f_neg = rows_l2norm(neg_a - neg_b).reshape((n_pos, n_neg))
    return relu(f_pos - f_neg + margin).sum()


def distill_losses(h_att: Tensor, nei: ne.NeighborEncoding,
                   hist: ne.HistoricalEmbeddingStore,
                   lambda_reg: float) -> tuple[Tensor, Tensor, Tensor]:
    """Distillation and regularization terms for one mini-batch's core rows.

    Returns (layer-consistency loss, attribute-history loss, output L2
    penalty).  The first sums 1 - cos(layer input, layer output) over
    layers; the second sums 1 - cos(stored x0, fresh h_att); the third
    is lambda_reg * sum_k ||layer-k output||^2 / n_core.
    """
    n_core = nei.n_core
    l_he1: Tensor | None = None
    l_reg: Tensor | None = None
    for k in range(1, len(nei.states)):
        prev = narrow_rows(nei.states[k - 1], 0, n_core)
        cur = narrow_rows(nei.states[k], 0, n_core)
        term = (1.0 - rows_cosine(prev, cur)).sum()
        l_he1 = term if l_he1 is None else l_he1 + term
        pen = (cur * cur).sum() * (1.0 / n_core)
        l_reg = pen if l_reg is None else l_reg + pen
    assert l_he1 is not None and l_reg is not None
    x0 = Tensor(hist.fetch(nei.ids[:n_core]))
    l_he2 = (1.0 - rows_cosine(x0, h_att)).sum()
    return l_he1, l_he2, l_reg * lambda_reg


# -- batch planning ------------------------------------------------------------


def side_batches(pair: GraphPair, side: str, cfg: TrainConfig) -> list[MiniBatch]:
    """Partition one side and assemble its mini-batches (training layout)."""
    kg = pair.graph(side)
    n_parts = cfg.num_parts or default_num_parts(len(kg.entities))
    part = partition_graph(kg, n_parts, rng_seed=cfg.rng_seed)
    return [assemble_batch(core, pair, side) for core in part.parts]


def _paired_batches(pair: GraphPair, cfg: TrainConfig,
                    train_pairs: list[tuple[int, int]]):
    batches_a = side_batches(pair, "A", cfg)
    batches_b = side_batches(pair, "B", cfg)
    part_a = _as_partition(batches_a)
    part_b = _as_partition(batches_b)
    pairing = pair_parts(part_a, part_b, train_pairs)
    return batches_a, batches_b, pairing


def _as_partition(batches: list[MiniBatch]):
    from .batching import Partition

    return Partition(parts=[set(mb.core.tolist()) for mb in batches], edge_cut=0)


# -- embedding gathers for the margin loss --------------------------------------


def _gather_embeddings(model: AlignmentModel, side: str, mb: MiniBatch,
                       h: Tensor, ents: list[int]) -> Tensor:
    """Rows of the full embedding for `ents` (side-local ids): in-core
    entities read from h, the rest via the historical approximation."""
    core_pos = {int(v): i for i, v in enumerate(mb.core)}
    outside = sorted({v for v in ents if v not in core_pos})
    if outside:
        approx = model.approx_embeddings(side, np.array(outside, dtype=np.int64))
        full = concat([h, approx], axis=0)
        out_pos = {v: mb.n_core + j for j, v in enumerate(outside)}
    else:
        full = h
        out_pos = {}
    idx = np.array([core_pos.get(v, out_pos.get(v, -1)) for v in ents], dtype=np.intp)
    return full.take_rows(idx)


# -- the epoch loop ------------------------------------------------------------


def _warmup(model: AlignmentModel, batches: list[MiniBatch], passes: int) -> None:
    for _ in range(max(1, passes)):
        for mb in batches:
            attr = model.encode_attributes(mb.attr_slots)
            gids = mb.global_ids(model.pair)[: mb.n_core]
            model.hist.update(gids, attr.h_att.data)


def train(
    cfg: TrainConfig,
    kg_a: KnowledgeGraph,
    kg_b: KnowledgeGraph,
    seeds: SeedAlignment,
    out_dir: str | None = None,
    checkpoint_every: int = 0,
) -> ck.Checkpoint:
    """Run the full training loop and return the final checkpoint.

    When out_dir is given, a loss-curve CSV and the final checkpoint are
    written there (plus periodic checkpoints every `checkpoint_every`
    epochs when positive).  On a non-finite loss the run aborts and the
    last end-of-epoch checkpoint is returned, with the divergence epoch
    recorded in its manifest.
    """
    cfg.validate()
    train_pairs = seeds.train_pairs()
    if not train_pairs:
        raise ValueError("seed alignment train split is empty")
    pair = GraphPair(kg_a, kg_b)
    model = AlignmentModel(pair, d=cfg.d, d_c=cfg.d_c, heads=cfg.heads,
                           layers=cfg.layers, rng_seed=cfg.rng_seed)
    batches_a, batches_b, pairing = _paired_batches(pair, cfg, train_pairs)
    pool_a = np.arange(len(kg_a.entities))
    pool_b = np.arange(len(kg_b.entities))
    neg_rng = np.random.default_rng(cfg.rng_seed + 1)

    _warmup(model, batches_a + batches_b, cfg.warmup_epochs)

    history: list[dict] = []
    config_dict = asdict(cfg)
    last_good = ck.snapshot(model, config_dict, epoch=0, loss_history=history)
    diverged_at: int | None = None

    core_sets_a = [set(mb.core.tolist()) for mb in batches_a]
    core_sets_b = [set(mb.core.tolist()) for mb in batches_b]

    for epoch in range(cfg.epochs):
        totals = {"l_align": 0.0, "l_he1": 0.0, "l_he2": 0.0, "l_reg": 0.0}
        try:
            for ia, ib in pairing:
                mb_a, mb_b = batches_a[ia], batches_b[ib]
                h_a, attr_a, nei_a = model.encode_batch(mb_a)
                h_b, attr_b, nei_b = model.encode_batch(mb_b)

                positives = [
                    p for p in train_pairs
                    if p[0] in core_sets_a[ia] or p[1] in core_sets_b[ib]
                ]
                total: Tensor | None = None
                if positives:
                    negatives = sample_negatives(positives, pool_a, pool_b,
                                                 cfg.negatives, neg_rng)
                    flat = [nv for group in negatives for nv in group]
                    ents_a = [p[0] for p in positives] + [nv[0] for nv in flat]
                    ents_b = [p[1] for p in positives] + [nv[1] for nv in flat]
                    emb_a = _gather_embeddings(model, "A", mb_a, h_a, ents_a)
                    emb_b = _gather_embeddings(model, "B", mb_b, h_b, ents_b)
                    n_pos = len(positives)
                    l_align = margin_loss(
                        narrow_rows(emb_a, 0, n_pos),
                        narrow_rows(emb_b, 0, n_pos),
                        narrow_rows(emb_a, n_pos, len(flat)),
                        narrow_rows(emb_b, n_pos, len(flat)),
                        cfg.margin,
                    )
                    totals["l_align"] += float(l_align.data)
                    total = l_align * cfg.w_align

                for h_att, nei in ((attr_a.h_att, nei_a), (attr_b.h_att, nei_b)):
                    l_he1, l_he2, l_reg = distill_losses(h_att, nei, model.hist,
                                                         cfg.lambda_reg)
                    totals["l_he1"] += float(l_he1.data)
                    totals["l_he2"] += float(l_he2.data)
                    totals["l_reg"] += float(l_reg.data)
                    term = l_he1 * cfg.w_he1 + l_he2 * cfg.w_he2 + l_reg * cfg.w_reg
                    total = term if total is None else total + term

                assert total is not None
                if not np.isfinite(total.data):
                    raise NonFiniteError("non-finite total loss")
                total.backward()
                nn.adam_step(model.store, cfg.lr)
                ne.update_store(model.hist, nei_a)
                ne.update_store(model.hist, nei_b)
        except NonFiniteError as exc:
            # blow-up can surface as an exception mid-forward (NaN hitting a
            # softmax) or as a non-finite loss value; both end the run here
            log.warning("diverged at epoch %d (%s); keeping last good state",
                        epoch, exc)
            diverged_at = epoch
            break

        history.append({"epoch": epoch, **totals})
        log.info("epoch %d: align=%.4f he1=%.4f he2=%.4f reg=%.4f",
                 epoch, totals["l_align"], totals["l_he1"], totals["l_he2"],
                 totals["l_reg"])
        last_good = ck.snapshot(model, config_dict, epoch=epoch + 1,
                                loss_history=history)
        if out_dir and checkpoint_every > 0 and (epoch + 1) % checkpoint_every == 0:
            ck.save_checkpoint(last_good, os.path.join(out_dir, f"epoch{epoch + 1:04d}"))

    if diverged_at is not None:
        last_good = ck.Checkpoint(
            manifest={**last_good.manifest, "diverged_at": diverged_at},
            tensors=last_good.tensors,
        )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_loss_curve(history, os.path.join(out_dir, "loss_curve.csv"))
        ck.save_checkpoint(last_good, os.path.join(out_dir, "final"))
    return last_good


def write_loss_curve(history: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,l_align,l_he1,l_he2,l_reg\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['l_align']!r},{row['l_he1']!r},"
                     f"{row['l_he2']!r},{row['l_reg']!r}\n")
