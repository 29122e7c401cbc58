"""Encoder blocks against direct-formula references, plus gradient checks."""

import numpy as np
import pytest

from oracles import (
    oracle_attention,
    oracle_gated_fusion,
    oracle_gcn_layer,
    oracle_normalized_adjacency,
)

from opselect import autograd as ag
from opselect.autograd import Tensor, grad_check
from opselect.cvrp import generate_instance, initial_solution
from opselect.encoder import (
    AttentionWeights,
    ModelConfig,
    ModelParams,
    cross_attention,
    encode,
    fusion_layer,
    gated_fusion,
    gcn_forward,
    multi_head_self_attention,
    normalized_adjacency,
)
from opselect.errors import ConfigError, ShapeError
from opselect.rng import make_rng
from opselect.state import build_search_state, initial_opt_features

SMALL = ModelConfig(
    gcn_hidden=4,
    d_model=8,
    n_heads=2,
    n_fusion_layers=2,
    ffn_hidden=16,
    opt_embed=8,
    n_actions=4,
    policy_hidden=8,
)


def small_state(n=5, seed=3, n_actions=4):
    inst = generate_instance(n, seed=seed)
    sol = initial_solution(inst, seed=seed + 1)
    return build_search_state(inst, sol, initial_opt_features(sol.cost))


def rand_weights(rng, d, heads, d_head):
    return AttentionWeights(
        heads=[
            (
                Tensor(rng.standard_normal((d, d_head)), requires_grad=True),
                Tensor(rng.standard_normal((d, d_head)), requires_grad=True),
                Tensor(rng.standard_normal((d, d_head)), requires_grad=True),
            )
            for _ in range(heads)
        ],
        wo=Tensor(rng.standard_normal((d, d)), requires_grad=True),
    )


class TestConfig:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=30, n_heads=4)

    def test_embed_dim(self):
        assert ModelConfig().embed_dim == 80
        assert SMALL.embed_dim == 24

    def test_params_registered_once(self):
        params = ModelParams.init(SMALL, seed=0)
        ids = [id(t) for t in params.tensors.values()]
        assert len(ids) == len(set(ids))

    def test_shared_modality_params(self):
        params = ModelParams.init(
            ModelConfig(share_modality_params=True), seed=0
        )
        assert params.get("layer0.sol.self.wq0") is params.get("layer0.dis.self.wq0")
        assert not any(".sol." in k for k in params.tensors)


class TestGcn:
    def test_single_node_self_loop(self):
        w = Tensor(np.eye(3))
        out = gcn_forward(np.zeros((1, 1)), np.array([[1.0, -2.0, 3.0]]), w)
        assert out.data.tolist() == [[1.0, 0.0, 3.0]]

    def test_identity_pass(self):
        x = np.abs(np.random.default_rng(0).standard_normal((4, 3)))
        out = gcn_forward(np.zeros((4, 4)), x, Tensor(np.eye(3)))
        assert np.allclose(out.data, x)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        adj = rng.random((5, 5))
        adj = (adj + adj.T) / 2
        np.fill_diagonal(adj, 0)
        x = rng.standard_normal((5, 3))
        w = rng.standard_normal((3, 4))
        got = gcn_forward(adj, x, Tensor(w))
        assert np.allclose(got.data, oracle_gcn_layer(adj, x, w), atol=1e-9)

    def test_normalization_matches_oracle(self):
        rng = np.random.default_rng(6)
        adj = rng.random((6, 6))
        adj = (adj + adj.T) / 2
        np.fill_diagonal(adj, 0)
        assert np.allclose(
            normalized_adjacency(adj), oracle_normalized_adjacency(adj), atol=1e-12
        )

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            gcn_forward(np.zeros((2, 3)), np.zeros((2, 3)), Tensor(np.eye(3)))
        with pytest.raises(ShapeError):
            gcn_forward(np.zeros((2, 2)), np.zeros((3, 3)), Tensor(np.eye(3)))


class TestAttention:
    def test_single_node(self):
        rng = np.random.default_rng(1)
        w = rand_weights(rng, 4, 2, 2)
        h = Tensor(rng.standard_normal((1, 4)))
        out = multi_head_self_attention(h, w)
        vs = np.concatenate([(h.data @ wv.data) for _, _, wv in w.heads], axis=1)
        assert np.allclose(out.data, vs @ w.wo.data, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        w = rand_weights(rng, 6, 3, 2)
        h = Tensor(rng.standard_normal((5, 6)))
        trace = {}
        multi_head_self_attention(h, w, trace, "t")
        assert len(trace) == 3
        for attn in trace.values():
            assert np.allclose(attn.sum(axis=1), 1.0, atol=1e-6)

    def test_matches_reference(self):
        rng = np.random.default_rng(3)
        w = rand_weights(rng, 8, 2, 4)
        h = Tensor(rng.standard_normal((4, 8)))
        got = multi_head_self_attention(h, w)
        want = oracle_attention(
            h.data, h.data, [(q.data, k.data, v.data) for q, k, v in w.heads], w.wo.data
        )
        assert np.allclose(got.data, want, atol=1e-9)

    def test_cross_equals_self_when_inputs_match(self):
        rng = np.random.default_rng(4)
        w = rand_weights(rng, 8, 2, 4)
        h = Tensor(rng.standard_normal((4, 8)))
        self_out = multi_head_self_attention(h, w)
        cross_dis, cross_sol = cross_attention(h, h, w, w)
        assert np.allclose(cross_dis.data, self_out.data, atol=1e-12)
        assert np.allclose(cross_sol.data, self_out.data, atol=1e-12)

    def test_cross_matches_reference(self):
        rng = np.random.default_rng(5)
        wd = rand_weights(rng, 8, 2, 4)
        ws = rand_weights(rng, 8, 2, 4)
        hd = Tensor(rng.standard_normal((4, 8)))
        hs = Tensor(rng.standard_normal((4, 8)))
        got_d, got_s = cross_attention(hd, hs, wd, ws)
        want_d = oracle_attention(
            hd.data, hs.data, [(q.data, k.data, v.data) for q, k, v in wd.heads], wd.wo.data
        )
        want_s = oracle_attention(
            hs.data, hd.data, [(q.data, k.data, v.data) for q, k, v in ws.heads], ws.wo.data
        )
        assert np.allclose(got_d.data, want_d, atol=1e-9)
        assert np.allclose(got_s.data, want_s, atol=1e-9)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(6)
        w = rand_weights(rng, 8, 2, 4)
        with pytest.raises(ShapeError):
            cross_attention(
                Tensor(rng.standard_normal((4, 8))),
                Tensor(rng.standard_normal((4, 6))),
                w,
                w,
            )

    def test_attention_block_gradcheck(self):
        rng = np.random.default_rng(7)
        w = rand_weights(rng, 6, 2, 3)
        h = Tensor(rng.standard_normal((4, 6)))
        tensors = {"wo": w.wo}
        for m, (q, k, v) in enumerate(w.heads):
            tensors.update({f"q{m}": q, f"k{m}": k, f"v{m}": v})
        report = grad_check(
            lambda: ag.sum_all(ag.mul(multi_head_self_attention(h, w), 0.1)),
            tensors,
            step=1e-5,
        )
        assert report["max_rel_err"] < 1e-3


class TestGate:
    def test_zero_gate_averages(self):
        rng = np.random.default_rng(8)
        hs = Tensor(rng.standard_normal((3, 4)))
        hc = Tensor(rng.standard_normal((3, 4)))
        out = gated_fusion(hs, hc, Tensor(np.zeros((8, 4))))
        assert np.allclose(out.data, (hs.data + hc.data) / 2, atol=1e-12)

    def test_equal_inputs_pass_through(self):
        rng = np.random.default_rng(9)
        h = Tensor(rng.standard_normal((3, 4)))
        wg = Tensor(rng.standard_normal((8, 4)))
        out = gated_fusion(h, h, wg)
        assert np.allclose(out.data, h.data, atol=1e-12)

    def test_matches_reference(self):
        rng = np.random.default_rng(10)
        hs = Tensor(rng.standard_normal((3, 4)))
        hc = Tensor(rng.standard_normal((3, 4)))
        wg = Tensor(rng.standard_normal((8, 4)))
        out = gated_fusion(hs, hc, wg)
        assert np.allclose(
            out.data, oracle_gated_fusion(hs.data, hc.data, wg.data), atol=1e-12
        )

    def test_alpha_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(11)
        trace = {}
        gated_fusion(
            Tensor(rng.standard_normal((5, 4))),
            Tensor(rng.standard_normal((5, 4))),
            Tensor(rng.standard_normal((8, 4)) * 3),
            trace,
            "g",
        )
        alpha = trace["g.gate"]
        assert (alpha > 0).all() and (alpha < 1).all()

    def test_bad_gate_shape(self):
        rng = np.random.default_rng(12)
        h = Tensor(rng.standard_normal((3, 4)))
        with pytest.raises(ShapeError):
            gated_fusion(h, h, Tensor(np.zeros((4, 4))))


class TestFusionLayer:
    def test_zero_weights_degenerate(self):
        params = ModelParams.init(SMALL, seed=1, dtype=np.float64)
        for name, t in params.tensors.items():
            if "layer0" in name and ("self." in name or "cross." in name or "ffn" in name):
                t.data[:] = 0.0
        rng = np.random.default_rng(13)
        h_dis = Tensor(rng.standard_normal((4, 8)))
        h_sol = Tensor(rng.standard_normal((4, 8)))
        out_dis, _ = fusion_layer(h_dis, h_sol, params, layer=0)
        ln = lambda a: (a - a.mean(axis=1, keepdims=True)) / np.sqrt(
            a.var(axis=1, keepdims=True) + 1e-5
        )
        assert np.allclose(out_dis.data, ln(ln(h_dis.data)), atol=1e-9)

    def test_layer_gradcheck(self):
        params = ModelParams.init(SMALL, seed=2, dtype=np.float64)
        rng = np.random.default_rng(14)
        h_dis = Tensor(rng.standard_normal((4, 8)))
        h_sol = Tensor(rng.standard_normal((4, 8)))
        layer0 = {k: t for k, t in params.tensors.items() if k.startswith("layer0.dis.self")}
        layer0["layer0.dis.gate"] = params.tensors["layer0.dis.gate"]
        layer0["layer0.dis.ffn.w1"] = params.tensors["layer0.dis.ffn.w1"]
        layer0["layer0.dis.ln1.g"] = params.tensors["layer0.dis.ln1.g"]

        def loss():
            a, b = fusion_layer(h_dis, h_sol, params, layer=0)
            return ag.sum_all(ag.add(ag.mul(a, 0.1), ag.mul(b, 0.1)))

        report = grad_check(loss, layer0, step=1e-5)
        assert report["max_rel_err"] < 1e-3


class TestEncode:
    def test_output_shape_and_determinism(self):
        params = ModelParams.init(SMALL, seed=3)
        state = small_state()
        a = encode(state, params)
        b = encode(state, params)
        assert a.data.shape == (1, SMALL.embed_dim)
        assert (a.data == b.data).all()
        assert np.isfinite(a.data).all()

    def test_minimal_two_node_state(self):
        params = ModelParams.init(SMALL, seed=4)
        state = small_state(n=1, seed=0)
        out = encode(state, params)
        assert out.data.shape == (1, SMALL.embed_dim)
        assert np.isfinite(out.data).all()

    def test_embed_dim_constant_across_sizes(self):
        params = ModelParams.init(SMALL, seed=5)
        dims = {encode(small_state(n=n, seed=n), params).data.shape for n in (2, 6, 12, 25)}
        assert dims == {(1, SMALL.embed_dim)}

    def test_permutation_invariance(self):
        params = ModelParams.init(SMALL, seed=6, dtype=np.float64)
        inst = generate_instance(8, seed=20)
        sol = initial_solution(inst, seed=21)
        state = build_search_state(inst, sol, initial_opt_features(sol.cost))
        base = encode(state, params).data

        rng = make_rng(99)
        for trial in range(3):
            perm = np.concatenate([[0], 1 + rng.permutation(inst.n_customers)])
            inv = np.argsort(perm)
            from opselect.cvrp import Instance, Solution

            pinst = Instance(
                name="perm",
                coords=inst.coords[perm],
                demands=inst.demands[perm],
                capacity=inst.capacity,
            )
            proutes = [[int(inv[c]) for c in r] for r in sol.routes]
            psol = Solution.from_routes(pinst, proutes)
            pstate = build_search_state(pinst, psol, initial_opt_features(psol.cost))
            out = encode(pstate, params).data
            rel = np.abs(out - base).max() / max(1.0, np.abs(base).max())
            assert rel < 1e-5

    def test_ablation_flags_same_shape(self):
        state = small_state()
        shapes = set()
        for kwargs in (
            {},
            {"disable_cross_attention": True},
            {"disable_gate": True},
            {"share_modality_params": True},
        ):
            cfg = ModelConfig(
                gcn_hidden=4,
                d_model=8,
                n_heads=2,
                n_fusion_layers=2,
                ffn_hidden=16,
                opt_embed=8,
                n_actions=4,
                policy_hidden=8,
                **kwargs,
            )
            params = ModelParams.init(cfg, seed=7)
            shapes.add(encode(state, params).data.shape)
        assert shapes == {(1, SMALL.embed_dim)}

    def test_ablations_change_output(self):
        state = small_state()
        outs = []
        for kwargs in ({}, {"disable_cross_attention": True}, {"disable_gate": True}):
            cfg = ModelConfig(
                gcn_hidden=4,
                d_model=8,
                n_heads=2,
                n_fusion_layers=2,
                ffn_hidden=16,
                opt_embed=8,
                n_actions=4,
                policy_hidden=8,
                **kwargs,
            )
            outs.append(encode(state, ModelParams.init(cfg, seed=8)).data)
        assert not np.allclose(outs[0], outs[1])
        assert not np.allclose(outs[0], outs[2])

    def test_full_encoder_gradcheck_small_config(self):
        from opselect.state import update_opt_features

        params = ModelParams.init(SMALL, seed=9, dtype=np.float64)
        state = small_state(n=4, seed=10)
        # Non-zero opt features keep the embedding ReLU away from its kink,
        # where central differences disagree with the subgradient.
        state.opt = update_opt_features(
            state.opt, 1, state.opt.cost_scale, state.opt.cost_scale * 1.1, state.opt.cost_scale
        )
        weight = Tensor(
            np.random.default_rng(15).standard_normal((1, SMALL.embed_dim))
        )
        report = grad_check(
            lambda: ag.sum_all(ag.mul(encode(state, params), weight)),
            params.tensors,
            step=1e-5,
        )
        assert report["max_rel_err"] < 1e-3
