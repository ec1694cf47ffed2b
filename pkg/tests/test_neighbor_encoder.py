import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from kgalign import neighbor_encoder as ne
from kgalign import nn
from kgalign.tensor import Tensor


def make_store(d=4, n_preds=3, seed=17):
    rng = np.random.default_rng(seed)
    store = nn.ParameterStore()
    ne.create_neighbor_params(store, d, rng)
    store.create("pred_emb", nn.embedding_init(rng, n_preds, d))
    return store


def make_sub(n, edges, n_core=None, d=4):
    """edges: (u, v, pred) triples; both directions are materialized."""
    adj = np.zeros((n, n))
    entry_node, entry_pred_g = [], []
    src, dst, prd, drc = [], [], [], []
    for u, v, p in edges:
        adj[u, v] = adj[v, u] = 1.0
        for a, b, dr in ((u, v, "out"), (v, u, "in")):
            entry_node.append(a)
            entry_pred_g.append(p)
            src.append(a)
            dst.append(b)
            prd.append(p)
            drc.append(dr)
    np.fill_diagonal(adj, 0.0)
    uniq, inv = (
        np.unique(entry_pred_g, return_inverse=True)
        if entry_pred_g
        else (np.array([], dtype=np.int64), np.array([], dtype=np.intp))
    )
    return ne.SubgraphTensors(
        ids=np.arange(n),
        n_core=n if n_core is None else n_core,
        adj=adj,
        entry_node=np.array(entry_node, dtype=np.int64),
        entry_pred=inv,
        uniq_preds=uniq,
        edge_src=np.array(src, dtype=np.int64),
        edge_dst=np.array(dst, dtype=np.int64),
        edge_pred=np.array(prd, dtype=np.int64),
        edge_dir=drc,
    )


def make_hist(n, d=4, seed=3):
    hist = ne.HistoricalEmbeddingStore(n, d)
    hist.x0[:] = np.random.default_rng(seed).normal(size=(n, d))
    return hist


# -- gate --------------------------------------------------------------------------


def test_gate_isolated_node_is_half():
    store = make_store()
    sub = make_sub(3, [(0, 1, 0)])  # node 2 isolated
    rel = store["pred_emb"].take_rows(sub.uniq_preds)
    g = ne.compute_gate(sub, rel, store)
    np.testing.assert_allclose(g.data[2], np.full(4, 0.5))


def test_gate_zero_relations_half_everywhere():
    store = make_store()
    store["pred_emb"].data[:] = 0
    sub = make_sub(3, [(0, 1, 0), (1, 2, 1)])
    rel = store["pred_emb"].take_rows(sub.uniq_preds)
    g = ne.compute_gate(sub, rel, store)
    np.testing.assert_allclose(g.data, np.full((3, 4), 0.5))


def test_gate_path_graph_matches_hand_computation():
    store = make_store(seed=7)
    sub = make_sub(3, [(0, 1, 0), (1, 2, 1)])
    rel = store["pred_emb"].take_rows(sub.uniq_preds)
    g = ne.compute_gate(sub, rel, store).data
    r = store["pred_emb"].data
    r_in = np.vstack([r[0], (r[0] + r[1]) / 2, r[1]])
    pre = sub.adj @ (r_in @ store["nei.W_r"].data)
    np.testing.assert_allclose(g, 1 / (1 + np.exp(-pre)), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), n=st.integers(1, 6))
def test_gate_in_open_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    store = make_store(seed=seed)
    edges = [(int(rng.integers(n)), int(rng.integers(n)), int(rng.integers(3))) for _ in range(n)]
    edges = [(u, v, p) for u, v, p in edges if u != v]
    sub = make_sub(n, edges)
    rel = (
        store["pred_emb"].take_rows(sub.uniq_preds)
        if sub.uniq_preds.size
        else Tensor(np.zeros((0, 4)))
    )
    g = ne.compute_gate(sub, rel, store).data
    assert (g > 0).all() and (g < 1).all()


# -- historical store -----------------------------------------------------------------


def test_history_identity_wdist():
    store = make_store()
    store["hist.W_dist"].data[:] = np.eye(4)
    hist = make_hist(5)
    out = ne.approximate_history(np.array([1, 3]), hist, store)
    np.testing.assert_allclose(out.data, hist.x0[[1, 3]])


def test_history_zero_row_zero_output():
    store = make_store()
    hist = ne.HistoricalEmbeddingStore(4, 4)
    out = ne.approximate_history(np.array([2]), hist, store)
    np.testing.assert_allclose(out.data, np.zeros((1, 4)))


def test_history_matches_tripleloop_oracle():
    store = make_store(seed=40)
    hist = make_hist(6, seed=41)
    ids = np.array([0, 2, 5])
    out = ne.approximate_history(ids, hist, store).data
    expect = oracles.matmul_triple_loop(hist.x0[ids], store["hist.W_dist"].data)
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_history_unknown_id_errors():
    store = make_store()
    hist = make_hist(4)
    with pytest.raises(ValueError):
        ne.approximate_history(np.array([4]), hist, store)


def test_history_gradient_hits_wdist_not_x0():
    store = make_store()
    hist = make_hist(4)
    before = hist.x0.copy()
    out = ne.approximate_history(np.arange(4), hist, store)
    out.sum().backward()
    assert store["hist.W_dist"].grad is not None
    np.testing.assert_array_equal(hist.x0, before)


# -- relation update -------------------------------------------------------------------


def test_update_relations_zero_gate_identity():
    store = make_store()
    sub = make_sub(2, [(0, 1, 0)])
    rel = store["pred_emb"].take_rows(sub.uniq_preds)
    out = ne.update_relations(Tensor(np.zeros((2, 4))), rel, sub, store)
    np.testing.assert_allclose(out.data, rel.data)


def test_update_relations_zero_wrprime_identity():
    store = make_store()
    store["nei.W_rprime"].data[:] = 0
    sub = make_sub(2, [(0, 1, 0)])
    rel = store["pred_emb"].take_rows(sub.uniq_preds)
    gamma = Tensor(np.random.default_rng(0).random((2, 4)))
    out = ne.update_relations(gamma, rel, sub, store)
    np.testing.assert_allclose(out.data, rel.data)


def test_update_relations_single_edge_hand_formula():
    store = make_store(seed=19)
    sub = make_sub(2, [(0, 1, 1)])
    rel = store["pred_emb"].take_rows(sub.uniq_preds)  # just pred 1
    gamma = Tensor(np.random.default_rng(1).random((2, 4)))
    out = ne.update_relations(gamma, rel, sub, store).data
    gamma_p = gamma.data.mean(axis=0)  # both nodes incident to the edge
    expect = rel.data + gamma_p * (rel.data @ store["nei.W_rprime"].data)
    np.testing.assert_allclose(out, expect, atol=1e-12)


# -- store updates ----------------------------------------------------------------------


def enc_of(store, hist, sub, heads=2):
    rel_emb = store["pred_emb"]
    return ne.encode_subgraph(sub, hist, store, rel_emb, heads=heads)


def test_update_store_roundtrip_core_only():
    store = make_store()
    hist = make_hist(6)
    sub = make_sub(4, [(0, 1, 0), (2, 3, 1)], n_core=2)
    before_halo = hist.x0[2:4].copy()
    enc = enc_of(store, hist, sub)
    ne.update_store(hist, enc)
    np.testing.assert_array_equal(hist.x0[0:2], enc.h_nei.data[0:2])
    np.testing.assert_array_equal(hist.x0[2:4], before_halo)


def test_update_store_disjoint_batches_both_visible():
    hist = ne.HistoricalEmbeddingStore(4, 4)
    hist.update(np.array([0, 1]), np.ones((2, 4)))
    hist.update(np.array([2, 3]), np.full((2, 4), 2.0))
    assert (hist.x0[:2] == 1).all() and (hist.x0[2:] == 2).all()


def test_update_store_shape_mismatch_errors():
    hist = ne.HistoricalEmbeddingStore(4, 4)
    with pytest.raises(ValueError):
        hist.update(np.array([0, 1]), np.ones((3, 4)))


# -- encoding ----------------------------------------------------------------------------


def test_encode_single_node():
    store = make_store()
    hist = make_hist(1)
    enc = enc_of(store, hist, make_sub(1, []))
    np.testing.assert_allclose(enc.alpha, [[1.0]])
    assert np.isfinite(enc.h_nei.data).all()


def test_encode_identical_isolated_nodes_symmetric():
    store = make_store()
    hist = ne.HistoricalEmbeddingStore(2, 4)
    hist.x0[:] = np.random.default_rng(5).normal(size=4)  # same row twice
    enc = enc_of(store, hist, make_sub(2, []))
    np.testing.assert_allclose(enc.h_nei.data[0], enc.h_nei.data[1], atol=1e-12)


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def nei_reference(sub, x0, store, heads, n_layers=3):
    """Independent scripted forward pass over one subgraph."""
    w_dist = store["hist.W_dist"].data
    w_r = store["nei.W_r"].data
    w_rp = store["nei.W_rprime"].data
    x_he = x0 @ w_dist
    rel = store["pred_emb"].data[sub.uniq_preds]
    n = len(sub.ids)

    def r_in(r):
        out = np.zeros((n, r.shape[1]))
        cnt = np.zeros(n)
        for node, p in zip(sub.entry_node, sub.entry_pred):
            out[node] += r[p]
            cnt[node] += 1
        return out / np.maximum(cnt, 1)[:, None]

    def gate(r):
        return 1 / (1 + np.exp(-(sub.adj @ (r_in(r) @ w_r))))

    g = gate(rel)
    x = g * x_he
    alphas = []
    for k in range(n_layers):
        y, a = oracles.attention_reference(
            x,
            store[f"nei.att{k}.Wq"].data,
            store[f"nei.att{k}.Wk"].data,
            store[f"nei.att{k}.Wv"].data,
            store[f"nei.att{k}.Wo"].data,
            heads,
        )
        alphas.append(a)
        x_res = _ln(x + y, store[f"nei.att{k}.ln_g"].data, store[f"nei.att{k}.ln_b"].data)
        if sub.uniq_preds.size:
            gam_p = np.zeros_like(rel)
            cnt = np.zeros(len(rel))
            for node, p in zip(sub.entry_node, sub.entry_pred):
                gam_p[p] += g[node]
                cnt[p] += 1
            gam_p /= np.maximum(cnt, 1)[:, None]
            rel = rel + gam_p * (rel @ w_rp)
        g = gate(rel)
        x = g * x_res
    return x, np.mean(alphas, axis=0)


def test_four_node_toy_matches_reference_script():
    store = make_store(seed=23)
    hist = make_hist(4, seed=24)
    sub = make_sub(4, [(0, 1, 0), (1, 2, 1), (2, 3, 0)])
    enc = enc_of(store, hist, sub)
    ref_h, ref_a = nei_reference(sub, hist.x0, store, heads=2)
    np.testing.assert_allclose(enc.h_nei.data, ref_h, atol=1e-10)
    np.testing.assert_allclose(enc.alpha, ref_a, atol=1e-10)


def test_alpha_rows_sum_to_one():
    store = make_store(seed=2)
    hist = make_hist(5, seed=2)
    enc = enc_of(store, hist, make_sub(5, [(0, 1, 0), (2, 3, 1), (3, 4, 2)]))
    np.testing.assert_allclose(enc.alpha.sum(axis=1), np.ones(5), atol=1e-6)


def test_permutation_equivariance():
    store = make_store(seed=11)
    hist = make_hist(4, seed=12)
    edges = [(0, 1, 0), (1, 2, 1), (0, 3, 2)]
    sub = make_sub(4, edges)
    enc = enc_of(store, hist, sub)

    perm = np.array([2, 0, 3, 1])  # new index of each old node
    edges_p = [(perm[u], perm[v], p) for u, v, p in edges]
    sub_p = make_sub(4, edges_p)
    hist_p = ne.HistoricalEmbeddingStore(4, 4)
    hist_p.x0[perm] = hist.x0
    enc_p = enc_of(store, hist_p, sub_p)

    np.testing.assert_allclose(enc_p.h_nei.data[perm], enc.h_nei.data, atol=1e-9)
    np.testing.assert_allclose(enc_p.alpha[np.ix_(perm, perm)], enc.alpha, atol=1e-9)


def test_no_edges_identity_wdist_runs_clean():
    store = make_store()
    store["hist.W_dist"].data[:] = np.eye(4)
    hist = make_hist(3, seed=9)
    enc = enc_of(store, hist, make_sub(3, []))
    assert np.isfinite(enc.h_nei.data).all()
    for g in enc.gammas:
        np.testing.assert_allclose(g.data, np.full((3, 4), 0.5))


def test_layer_states_have_expected_count():
    store = make_store()
    hist = make_hist(3)
    enc = enc_of(store, hist, make_sub(3, [(0, 1, 0)]))
    assert len(enc.states) == ne.N_LAYERS + 1
    assert len(enc.gammas) == ne.N_LAYERS + 1


def test_gradients_pass_finite_difference_check():
    store = make_store(seed=31)
    hist = make_hist(4, seed=32)
    sub = make_sub(4, [(0, 1, 0), (1, 2, 1), (2, 3, 2)])
    w = np.random.default_rng(8).normal(size=(4, 4))

    def loss():
        enc = enc_of(store, hist, sub)
        total = (enc.h_nei * Tensor(w)).sum()
        for s in enc.states[1:]:
            total = total + (s * s).sum() * 0.01
        return total

    assert nn.grad_check(loss, store, max_entries=40) <= 1e-4
