"""Tests for the combined alignment model."""

import numpy as np
import pytest

from kgalign import batching as B
from kgalign import kg as K
from kgalign.model import AlignmentModel


def tiny_setup(n=14, seed=3, num_parts=2, d=8, d_c=4, heads=2):
    a, b, gold = K.gen_synthetic_pair(n, attr_per_entity=2, rel_density=0.15,
                                      char_noise=0.1, rng_seed=seed)
    pair = K.GraphPair(a, b)
    part = B.partition_graph(a, num_parts)
    mb = B.assemble_batch(part.parts[0], pair, "A")
    model = AlignmentModel(pair, d=d, d_c=d_c, heads=heads, rng_seed=0)
    return pair, mb, model


def test_embedding_is_attr_nei_concatenation():
    pair, mb, model = tiny_setup()
    h, attr, nei = model.encode_batch(mb)
    assert h.data.shape == (mb.n_core, 2 * model.d)
    assert np.allclose(h.data[:, : model.d], attr.h_att.data)
    assert np.allclose(h.data[:, model.d:], nei.h_nei.data[: mb.n_core])
    assert np.isfinite(h.data).all()


def test_encode_batch_deterministic():
    pair, mb, _ = tiny_setup()
    h1 = AlignmentModel(pair, d=8, d_c=4, heads=2, rng_seed=5).encode_batch(mb)[0]
    h2 = AlignmentModel(pair, d=8, d_c=4, heads=2, rng_seed=5).encode_batch(mb)[0]
    assert np.array_equal(h1.data, h2.data)


def test_different_seed_different_params():
    pair, mb, _ = tiny_setup()
    h1 = AlignmentModel(pair, d=8, d_c=4, heads=2, rng_seed=0).encode_batch(mb)[0]
    h2 = AlignmentModel(pair, d=8, d_c=4, heads=2, rng_seed=1).encode_batch(mb)[0]
    assert not np.allclose(h1.data, h2.data)


def test_gradients_reach_both_encoders():
    pair, mb, model = tiny_setup()
    # a zeroed store kills the neighbor path; training always warms it up first
    model.hist.x0[:] = np.random.default_rng(0).normal(size=model.hist.x0.shape)
    h, _, _ = model.encode_batch(mb)
    (h * h).sum().backward()
    for name in ("attr.W_a", "attr.char_emb", "nei.W_r", "hist.W_dist", "pred_emb"):
        g = model.store[name].grad
        assert g is not None and np.abs(g).sum() > 0, name


def test_approx_embeddings_shape_and_attr_half():
    pair, mb, model = tiny_setup()
    ids = np.array([0, 3, 7])
    approx = model.approx_embeddings("B", ids)
    assert approx.data.shape == (3, 2 * model.d)
    # the attribute half of an approximation is the real attribute encoding
    attr = model.encode_attributes(model.slots_for("B", ids))
    assert np.allclose(approx.data[:, : model.d], attr.h_att.data)


def test_approx_neighbor_half_reads_store():
    pair, mb, model = tiny_setup()
    gid = pair.global_entity("B", 4)
    model.hist.update(np.array([gid]), np.ones((1, model.d)))
    before = model.approx_embeddings("B", np.array([4])).data.copy()
    model.hist.update(np.array([gid]), 2.0 * np.ones((1, model.d)))
    after = model.approx_embeddings("B", np.array([4])).data
    assert np.allclose(after[:, model.d:], 2.0 * before[:, model.d:])


def test_pred_table_has_no_attr_row():
    pair, _, model = tiny_setup()
    assert model.store["pred_emb"].data.shape[0] == pair.n_predicates + 1
    assert model.no_attr_pred == pair.n_predicates


def test_indivisible_heads_rejected():
    a, b, _ = K.gen_synthetic_pair(6, attr_per_entity=1, rel_density=0.2, rng_seed=0)
    pair = K.GraphPair(a, b)
    model = AlignmentModel(pair, d=6, d_c=4, heads=4, rng_seed=0)
    mb = B.assemble_batch({0, 1, 2, 3, 4, 5}, pair, "A")
    with pytest.raises(ValueError):
        model.encode_batch(mb)
