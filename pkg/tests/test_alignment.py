"""Tests for whole-graph inference, candidate ranking, and Hits@k."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgalign import alignment as A
from kgalign import checkpoint as C
from kgalign import kg as K
from kgalign import training as T

import oracles


def table(graph_id, vectors):
    return A.EntityEmbeddingTable(graph_id=graph_id,
                                  vectors=np.asarray(vectors, dtype=np.float64))


def trained_toy(tmp_path, n=16, epochs=2, rng_seed=2, num_parts=2):
    a, b, gold = K.gen_synthetic_pair(n, attr_per_entity=2, rel_density=0.15,
                                      char_noise=0.1, rng_seed=rng_seed)
    seeds = K.SeedAlignment.split(gold, 0.3, rng_seed=rng_seed)
    cfg = T.TrainConfig(epochs=epochs, d=8, d_c=4, heads=2,
                        num_parts=num_parts, rng_seed=rng_seed)
    ckpt = T.train(cfg, a, b, seeds)
    return a, b, gold, ckpt


# -- embed_all -------------------------------------------------------------------


def test_embed_all_shape_and_determinism(tmp_path):
    a, b, gold, ckpt = trained_toy(tmp_path)
    pair = K.GraphPair(a, b)
    t1 = A.embed_all(pair, "A", ckpt)
    t2 = A.embed_all(K.GraphPair(a, b), "A", ckpt)
    assert t1.vectors.shape == (len(a.entities), 2 * ckpt.config["d"])
    np.testing.assert_array_equal(t1.vectors, t2.vectors)
    assert t1.graph_id == a.id


def test_embed_all_matches_training_batch_layout(tmp_path):
    # with one partition the table must equal a single whole-graph forward
    a, b, gold, ckpt = trained_toy(tmp_path, num_parts=1)
    pair = K.GraphPair(a, b)
    model = C.model_from_checkpoint(ckpt, pair)
    tab = A.embed_all(pair, "A", ckpt, model=model)

    from kgalign.batching import assemble_batch

    mb = assemble_batch(set(range(len(a.entities))), pair, "A")
    h, _, _ = model.encode_batch(mb)
    np.testing.assert_array_equal(tab.vectors[mb.core], h.data)


def test_embed_all_rejects_other_graphs(tmp_path):
    a, b, gold, ckpt = trained_toy(tmp_path)
    a2, b2, _ = K.gen_synthetic_pair(16, attr_per_entity=2, rng_seed=9)
    with pytest.raises(C.CheckpointHashError):
        A.embed_all(K.GraphPair(a2, b2), "A", ckpt)


def test_embed_all_isolated_entity_is_finite(tmp_path):
    # rel_density 0 gives a graph with no relationship triples at all
    a, b, gold = K.gen_synthetic_pair(8, attr_per_entity=2, rel_density=0.0,
                                      rng_seed=3)
    seeds = K.SeedAlignment.split(gold, 0.5, rng_seed=3)
    cfg = T.TrainConfig(epochs=1, d=8, d_c=4, heads=2, num_parts=1, rng_seed=3)
    ckpt = T.train(cfg, a, b, seeds)
    tab = A.embed_all(K.GraphPair(a, b), "A", ckpt)
    assert np.isfinite(tab.vectors).all()


# -- similarity and ranking -------------------------------------------------------


def test_predict_identical_vectors_rank_first():
    va = table("a", [[1.0, 0.0], [0.0, 1.0]])
    vb = table("b", [[0.0, 1.0], [1.0, 0.0]])
    preds = A.predict(va, vb, queries=[0, 1], candidates=[0, 1],
                      gold={0: 1, 1: 0})
    assert preds[0].candidates[0] == 1 and preds[0].gold_rank == 1
    assert preds[1].candidates[0] == 0 and preds[1].gold_rank == 1
    assert preds[0].scores[0] == pytest.approx(1.0)


def test_predict_ties_break_by_ascending_id():
    va = table("a", [[1.0, 0.0]])
    vb = table("b", [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    preds = A.predict(va, vb, queries=[0], candidates=[2, 0, 1])
    assert preds[0].candidates == [0, 1, 2]


def test_predict_matches_bruteforce_cosine():
    rng = np.random.default_rng(0)
    va = table("a", rng.normal(size=(5, 6)))
    vb = table("b", rng.normal(size=(7, 6)))
    preds = A.predict(va, vb, queries=list(range(5)),
                      candidates=list(range(7)), k=7)
    for i, p in enumerate(preds):
        sims = [(oracles.cosine(va.vectors[i], vb.vectors[j]), j)
                for j in range(7)]
        expect = [j for s, j in sorted(sims, key=lambda t: (-t[0], t[1]))]
        assert p.candidates == expect
        for rank in range(1, 7):
            assert p.scores[rank - 1] >= p.scores[rank] - 1e-12


def test_predict_zero_norm_vector_scores_zero():
    va = table("a", [[0.0, 0.0]])
    vb = table("b", [[1.0, 0.0], [0.0, 2.0]])
    preds = A.predict(va, vb, queries=[0], candidates=[0, 1])
    assert preds[0].scores == [0.0, 0.0]
    assert preds[0].candidates == [0, 1]  # pure id tiebreak


def test_predict_l2_metric_orders_by_distance():
    va = table("a", [[0.0, 0.0]])
    vb = table("b", [[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]])
    preds = A.predict(va, vb, queries=[0], candidates=[0, 1, 2], metric="l2")
    assert preds[0].candidates == [1, 2, 0]
    assert preds[0].scores[0] == pytest.approx(-1.0)
    assert preds[0].scores[2] == pytest.approx(-5.0)


def test_predict_k_truncates_and_gold_rank_sees_past_k():
    va = table("a", [[1.0, 0.0]])
    vb = table("b", [[1.0, 0.0], [0.9, 0.1], [0.5, 0.5], [0.0, 1.0]])
    preds = A.predict(va, vb, queries=[0], candidates=[0, 1, 2, 3], k=2,
                      gold={0: 3})
    assert len(preds[0].candidates) == 2
    assert preds[0].gold_rank == 4


def test_predict_gold_outside_candidates_is_none():
    va = table("a", [[1.0, 0.0]])
    vb = table("b", [[1.0, 0.0], [0.0, 1.0]])
    preds = A.predict(va, vb, queries=[0], candidates=[0], gold={0: 1})
    assert preds[0].gold_rank is None


def test_predict_empty_candidates_raises():
    va = table("a", [[1.0, 0.0]])
    vb = table("b", [[1.0, 0.0]])
    with pytest.raises(ValueError):
        A.predict(va, vb, queries=[0], candidates=[])


def test_unknown_metric_raises():
    va = table("a", [[1.0, 0.0]])
    vb = table("b", [[1.0, 0.0]])
    with pytest.raises(ValueError):
        A.predict(va, vb, queries=[0], candidates=[0], metric="dot")


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0))
def test_cosine_ranking_invariant_to_rescaling(seed, scale):
    rng = np.random.default_rng(seed)
    va = table("a", rng.normal(size=(3, 4)))
    vb_raw = rng.normal(size=(6, 4))
    pred1 = A.predict(va, table("b", vb_raw), queries=[0, 1, 2],
                      candidates=list(range(6)), k=6)
    pred2 = A.predict(va, table("b", vb_raw * scale), queries=[0, 1, 2],
                      candidates=list(range(6)), k=6)
    for p1, p2 in zip(pred1, pred2):
        assert p1.candidates == p2.candidates


# -- hits@k ----------------------------------------------------------------------


def mk_pred(query, gold_rank):
    return A.AlignmentPrediction(query=query, candidates=[0], scores=[1.0],
                                 gold_rank=gold_rank)


def test_hits_at_k_percentage():
    preds = [mk_pred(0, 1), mk_pred(1, 3), mk_pred(2, 11)]
    assert A.hits_at_k(preds, 1) == pytest.approx(100.0 / 3.0)
    assert A.hits_at_k(preds, 10) == pytest.approx(200.0 / 3.0)
    assert A.hits_at_k(preds, 11) == pytest.approx(100.0)


def test_hits_at_k_all_first():
    preds = [mk_pred(i, 1) for i in range(4)]
    assert A.hits_at_k(preds, 1) == 100.0


def test_hits_at_k_monotone_in_k():
    rng = np.random.default_rng(1)
    preds = [mk_pred(i, int(r)) for i, r in
             enumerate(rng.integers(1, 20, size=30))]
    values = [A.hits_at_k(preds, k) for k in range(1, 21)]
    assert all(x <= y for x, y in zip(values, values[1:]))


def test_hits_at_k_rejects_empty_or_goldless():
    with pytest.raises(ValueError):
        A.hits_at_k([], 1)
    with pytest.raises(ValueError):
        A.hits_at_k([mk_pred(0, None)], 1)


def test_format_hits_two_decimals():
    assert A.format_hits(88.34567) == "88.35"
    assert A.format_hits(100.0) == "100.00"
    assert A.format_hits(0.0) == "0.00"
