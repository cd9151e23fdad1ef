import numpy as np
import pytest

from dgxplain.graph import DynamicGraph, NormalizedAdjacency, Snapshot
from dgxplain.model import (
    GcnParams,
    GruParams,
    HeadParams,
    LinkQuery,
    ModelParams,
    NodeQuery,
    WeightFormatError,
    gcn_forward,
    gru_cell_forward,
    init_params,
    link_predict,
    load_params,
    model_forward,
    node_regress,
    save_params,
)
from conftest import random_graph, small_params
from oracles import oracle_gcn_forward, oracle_gru_cell


def zero_gru(h, d):
    zeros_m = np.zeros((h, d))
    zeros_h = np.zeros((h, h))
    zeros_b = np.zeros(h)
    return GruParams(w_ir=zeros_m, w_iz=zeros_m, w_in=zeros_m,
                     w_hr=zeros_h, w_hz=zeros_h, w_hn=zeros_h,
                     b_ir=zeros_b, b_iz=zeros_b, b_in=zeros_b,
                     b_hr=zeros_b, b_hz=zeros_b, b_hn=zeros_b)


class TestGcnForward:
    def test_identity_pipeline(self, rng):
        x = np.abs(rng.normal(size=(4, 4)))
        tr = gcn_forward(NormalizedAdjacency(np.eye(4)), x,
                         GcnParams((np.eye(4),)), activation="relu",
                         final_activation="relu")
        np.testing.assert_allclose(tr.f[-1], x)

    def test_zero_weights_zero_output(self, rng):
        x = rng.normal(size=(4, 3))
        tr = gcn_forward(NormalizedAdjacency(np.eye(4)), x,
                         GcnParams((np.zeros((3, 2)),)))
        np.testing.assert_array_equal(tr.f[-1], np.zeros((4, 2)))

    def test_matches_oracle(self, rng):
        from dgxplain.graph import normalize_adjacency
        upper = np.triu((rng.random((4, 4)) < 0.5).astype(float), k=1)
        v = normalize_adjacency(upper + upper.T)
        x = rng.normal(size=(4, 3))
        ws = (rng.normal(size=(3, 3)), rng.normal(size=(3, 2)))
        tr = gcn_forward(v, x, GcnParams(ws))
        fs = oracle_gcn_forward(v.matrix, x, ws)
        for got, want in zip(tr.f, fs):
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_trace_p_equals_vf(self, rng):
        from dgxplain.graph import normalize_adjacency
        v = normalize_adjacency((rng.random((5, 5)) < 0.4).astype(float) * 0)
        x = rng.normal(size=(5, 3))
        ws = (rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))
        tr = gcn_forward(v, x, GcnParams(ws))
        for l in range(2):
            assert np.max(np.abs(tr.p[l] - v.matrix @ tr.f[l])) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            gcn_forward(NormalizedAdjacency(np.eye(3)),
                        rng.normal(size=(3, 4)), GcnParams((np.eye(3),)))


class TestGruCell:
    def test_all_zero_params(self):
        h, tr = gru_cell_forward(np.zeros(3), np.zeros(4), zero_gru(4, 3))
        np.testing.assert_allclose(tr.r, np.full(4, 0.5))
        np.testing.assert_allclose(tr.z, np.full(4, 0.5))
        np.testing.assert_array_equal(tr.n, np.zeros(4))
        np.testing.assert_array_equal(h, np.zeros(4))

    def test_forced_update_gate(self, rng):
        p = small_params("node_regression", seed=3).gru
        forced = GruParams(w_ir=p.w_ir, w_iz=p.w_iz, w_in=p.w_in,
                           w_hr=p.w_hr, w_hz=p.w_hz, w_hn=p.w_hn,
                           b_ir=p.b_ir, b_iz=np.full(3, 30.0), b_in=p.b_in,
                           b_hr=p.b_hr, b_hz=np.full(3, 30.0), b_hn=p.b_hn)
        x, h_prev = rng.normal(size=3), rng.normal(size=3)
        h, tr = gru_cell_forward(x, h_prev, forced)
        np.testing.assert_allclose(h, tr.n, atol=1e-9)

    def test_matches_oracle(self, rng):
        p = small_params("node_regression", seed=5).gru
        for _ in range(10):
            x, h_prev = rng.normal(size=3), rng.normal(size=3)
            h, tr = gru_cell_forward(x, h_prev, p)
            r, z, n, h_ref = oracle_gru_cell(x, h_prev, p)
            np.testing.assert_allclose(tr.r, r, atol=1e-14)
            np.testing.assert_allclose(tr.z, z, atol=1e-14)
            np.testing.assert_allclose(tr.n, n, atol=1e-14)
            np.testing.assert_allclose(h, h_ref, atol=1e-14)

    def test_gate_ranges(self, rng):
        p = small_params("node_regression", seed=9).gru
        x = rng.normal(size=(10_000, 3)) * 3
        hp = rng.normal(size=(10_000, 3)) * 3
        from dgxplain.model import _gru_step
        tr = _gru_step(x, hp, p)
        assert ((tr.r > 0) & (tr.r < 1)).all()
        assert ((tr.z > 0) & (tr.z < 1)).all()
        assert ((tr.n > -1) & (tr.n < 1)).all()

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            gru_cell_forward(np.array([np.nan, 0, 0]), np.zeros(3), zero_gru(3, 3))


class TestHeads:
    def test_link_zero_head_gives_half(self):
        head = HeadParams(w1=np.zeros((6, 4)), b1=np.zeros(4),
                          w2=np.zeros(4), b2=0.0, head_kind="link_prediction")
        prob, logit = link_predict(np.ones(3), np.ones(3), head)
        assert prob == 0.5 and logit == 0.0

    def test_link_order_matters(self, rng):
        head = HeadParams(w1=rng.normal(size=(6, 4)), b1=rng.normal(size=4),
                          w2=rng.normal(size=4), b2=0.1,
                          head_kind="link_prediction")
        h_u, h_v = rng.normal(size=3), rng.normal(size=3)
        assert link_predict(h_u, h_v, head)[1] != link_predict(h_v, h_u, head)[1]

    def test_link_matches_oracle_mlp(self, rng):
        head = HeadParams(w1=rng.normal(size=(6, 4)), b1=rng.normal(size=4),
                          w2=rng.normal(size=4), b2=0.3,
                          head_kind="link_prediction")
        h_u, h_v = rng.normal(size=3), rng.normal(size=3)
        inp = np.concatenate([h_u, h_v])
        hidden = np.maximum(inp @ head.w1 + head.b1, 0.0)
        logit_ref = hidden @ head.w2 + head.b2
        prob, logit = link_predict(h_u, h_v, head)
        assert abs(logit - logit_ref) < 1e-12
        assert abs(prob - 1 / (1 + np.exp(-logit_ref))) < 1e-12

    def test_regress_zero_weights_gives_bias(self):
        head = HeadParams(w1=np.zeros((3, 4)), b1=np.zeros(4),
                          w2=np.zeros(4), b2=1.25, head_kind="node_regression")
        assert node_regress(np.ones(3), head) == 1.25

    def test_regress_last_layer_linearity(self, rng):
        w1, b1 = rng.normal(size=(3, 4)), rng.normal(size=4)
        w2, b2 = rng.normal(size=4), 0.7
        h = rng.normal(size=3)
        y1 = node_regress(h, HeadParams(w1, b1, w2, b2, "node_regression"))
        y2 = node_regress(h, HeadParams(w1, b1, 2 * w2, b2, "node_regression"))
        assert abs((y2 - b2) - 2 * (y1 - b2)) < 1e-12

    def test_regress_softmax_mode(self, rng):
        w1, b1 = rng.normal(size=(3, 4)), rng.normal(size=4)
        w2, b2 = rng.normal(size=4), 0.7
        h = rng.normal(size=3)
        head = HeadParams(w1, b1, w2, b2, "node_regression", regress_mode="softmax")
        pre = h @ w1 + b1
        sm = np.exp(pre - pre.max())
        sm /= sm.sum()
        assert abs(node_regress(h, head) - (sm @ w2 + b2)) < 1e-12

    def test_wrong_head_kind(self, rng):
        head = HeadParams(w1=np.zeros((3, 4)), b1=np.zeros(4),
                          w2=np.zeros(4), b2=0.0, head_kind="node_regression")
        with pytest.raises(ValueError):
            link_predict(np.zeros(3), np.zeros(3), head)
        link = HeadParams(w1=np.zeros((6, 4)), b1=np.zeros(4),
                          w2=np.zeros(4), b2=0.0, head_kind="link_prediction")
        with pytest.raises(ValueError):
            node_regress(np.zeros(3), link)


class TestModelForward:
    def test_permutation_invariance(self, rng):
        g = random_graph(rng, n=5, d=3, t=3)
        params = small_params("link_prediction", seed=11)
        query = LinkQuery(1, 3)
        pred, _ = model_forward(g, params, query)

        perm = rng.permutation(5)
        inv = np.argsort(perm)
        snaps = tuple(Snapshot(s.adjacency[np.ix_(perm, perm)],
                               s.features[perm], s.timestamp_index)
                      for s in g.snapshots)
        pred_p, _ = model_forward(DynamicGraph(snaps), params,
                                  LinkQuery(int(inv[1]), int(inv[3])))
        assert abs(pred - pred_p) < 1e-10

    def test_matches_naive_reimplementation(self, rng):
        g = random_graph(rng, n=4, d=3, t=3)
        params = small_params("node_regression", seed=13)
        query = NodeQuery(2)
        pred, _ = model_forward(g, params, query)

        from oracles import oracle_normalize_adjacency
        h = np.zeros((4, 3))
        for snap in g.snapshots:
            v = oracle_normalize_adjacency(snap.adjacency)
            fs = oracle_gcn_forward(v, snap.features,
                                    list(params.gcn.layer_weights))
            h_new = np.zeros_like(h)
            for i in range(4):
                _, _, _, h_new[i] = oracle_gru_cell(fs[-1][i], h[i], params.gru)
            h = h_new
        hidden = np.maximum(h[2] @ params.head.w1 + params.head.b1, 0.0)
        ref = hidden @ params.head.w2 + params.head.b2
        assert abs(pred - ref) < 1e-10

    def test_update_rule_identity_in_trace(self, rng):
        g = random_graph(rng, n=4, d=3, t=4)
        params = small_params("node_regression", seed=17)
        _, trace = model_forward(g, params, NodeQuery(0))
        for tr in trace.gru:
            resid = tr.h - (1 - tr.z) * tr.h_prev - tr.z * tr.n
            assert np.max(np.abs(resid)) < 1e-12

    def test_forward_determinism(self, rng):
        g = random_graph(rng, n=4, d=3, t=2)
        params = small_params("link_prediction", seed=19)
        p1, t1 = model_forward(g, params, LinkQuery(0, 1))
        p2, t2 = model_forward(g, params, LinkQuery(0, 1))
        assert p1 == p2
        for a, b in zip(t1.gru, t2.gru):
            assert a.h.tobytes() == b.h.tobytes()

    def test_query_out_of_range(self, rng):
        g = random_graph(rng, n=4, d=3, t=2)
        params = small_params("link_prediction", seed=19)
        with pytest.raises(IndexError):
            model_forward(g, params, LinkQuery(0, 9))


class TestWeightPersistence:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        params = init_params(3, [4, 3], 5, "link_prediction", seed=23)
        path = tmp_path / "w.bin"
        save_params(params, path)
        loaded = load_params(path)
        from dgxplain.model import _tensor_list
        for (n1, t1), (n2, t2) in zip(_tensor_list(params), _tensor_list(loaded)):
            assert n1 == n2
            assert t1.tobytes() == t2.tobytes()
        assert loaded.metadata == params.metadata

    def test_corrupted_magic(self, tmp_path):
        params = init_params(3, [4], 5, "node_regression", seed=1)
        path = tmp_path / "w.bin"
        save_params(params, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFormatError, match="magic"):
            load_params(path)

    def test_truncated_file(self, tmp_path):
        params = init_params(3, [4], 5, "node_regression", seed=1)
        path = tmp_path / "w.bin"
        save_params(params, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 16])
        with pytest.raises(WeightFormatError, match="truncated"):
            load_params(path)

    def test_version_mismatch(self, tmp_path):
        params = init_params(3, [4], 5, "node_regression", seed=1)
        path = tmp_path / "w.bin"
        save_params(params, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightFormatError, match="version"):
            load_params(path)
