import itertools

import numpy as np
import pytest

from gatelab import autodiff as ad
from gatelab import layers as L
from gatelab.autodiff import Tape
from gatelab.graph import Graph, add_self_loops, erdos_renyi
from gatelab.initialization import InitPolicy, init_network
from gatelab.layers import (
    GateLayerParams,
    GatLayerParams,
    LayerSpec,
    MlpLayerParams,
    NetworkSpec,
    attention_coefficients,
    gat_scores,
    gate_scores,
    layer_forward,
    mlp_layer_forward,
    network_forward,
)

from conftest import random_graph, random_network
from oracles import dense_attention_layer, dense_network


def random_gat(rng, d_in, d_out, shared):
    W = rng.standard_normal((d_out, d_in))
    if shared:
        return GatLayerParams.shared_weights(W, rng.standard_normal(d_out))
    return GatLayerParams(W, rng.standard_normal((d_out, d_in)), rng.standard_normal(d_out))


def random_gate(rng, d_in, d_out, shared):
    if shared:
        return GateLayerParams.shared_weights(rng.standard_normal((d_out, d_in)),
                                              rng.standard_normal(d_out), rng.standard_normal(d_out))
    return GateLayerParams(*(rng.standard_normal((d_out, d_in)) for _ in range(3)),
                           rng.standard_normal(d_out), rng.standard_normal(d_out))


def all_small_graphs(n):
    """Every labelled simple graph on ``n`` nodes (n <= 4) or a random sample."""
    pairs = list(itertools.combinations(range(n), 2))
    for bits in itertools.product([0, 1], repeat=len(pairs)):
        yield add_self_loops(Graph.from_edges(n, [p for p, b in zip(pairs, bits) if b]))


class TestScores:
    def test_zero_attention_gives_zero_scores(self, rng):
        g = random_graph(6, 0.5, 0)
        p = random_gat(rng, 3, 4, False)
        p.a = np.zeros(4)
        np.testing.assert_array_equal(gat_scores(p, rng.standard_normal((6, 3)), g).value, 0.0)

    def test_shared_symmetric_inputs(self, rng):
        g = random_graph(6, 0.5, 1)
        H = np.tile(rng.standard_normal(3), (6, 1))
        e = gat_scores(random_gat(rng, 3, 4, True), H, g).value
        np.testing.assert_allclose(e, e[0], rtol=1e-15)

    def test_hand_arithmetic(self):
        g = add_self_loops(Graph.from_edges(2, [(0, 1)]))
        p = GatLayerParams(np.ones((1, 1)), np.ones((1, 1)), np.ones(1))
        e = gat_scores(p, np.array([[1.0], [-3.0]]), g).value
        # CSR order: (0->0), (1->0), (0->1), (1->1); edge 0->1 is position 2
        np.testing.assert_allclose(e[2], -0.4, rtol=1e-15)

    def test_missing_self_loops_rejected(self, rng):
        g = erdos_renyi(5, 0.5, 0)
        with pytest.raises(ValueError, match="self-loops"):
            gat_scores(random_gat(rng, 2, 2, False), rng.standard_normal((5, 2)), g)
        with pytest.raises(ValueError, match="self-loops"):
            gate_scores(random_gate(rng, 2, 2, False), rng.standard_normal((5, 2)), g)

    def test_gate_zero_attention_uniform_alpha(self, rng):
        g = random_graph(10, 0.4, 2)
        p = random_gate(rng, 3, 4, False)
        p.a_s, p.a_t = np.zeros(4), np.zeros(4)
        e = gate_scores(p, rng.standard_normal((10, 3)), g)
        alpha = attention_coefficients(e, g).value
        np.testing.assert_allclose(alpha, 1.0 / g.degrees[g.targets.ids], rtol=1e-15)

    def test_gate_alpha_vv_increases_with_magnitude(self):
        g = add_self_loops(Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)]))
        H = 0.05 * (np.abs(np.random.default_rng(0).standard_normal((4, 3))) + 0.1)
        vv = []
        for mag in (1.0, 5.0, 20.0):
            p = GateLayerParams.shared_weights(np.eye(3), -mag * np.ones(3), mag * np.ones(3))
            alpha = attention_coefficients(gate_scores(p, H, g), g).value
            vv.append(alpha[g.self_loop_positions[0]])
        assert vv[0] < vv[1] < vv[2] < 1.0

    def test_gate_shared_equals_unshared_with_equal_matrices(self, rng):
        g = random_graph(8, 0.4, 3)
        H = rng.standard_normal((8, 3))
        sh = random_gate(rng, 3, 4, True)
        un = GateLayerParams(sh.W.copy(), sh.W.copy(), sh.W.copy(), sh.a_s, sh.a_t)
        np.testing.assert_array_equal(gate_scores(sh, H, g).value, gate_scores(un, H, g).value)

    @pytest.mark.parametrize("seed", range(10))
    def test_tied_gate_equals_gat_s(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(10, 0.3, seed)
        H = rng.standard_normal((10, 5))
        W, a = rng.standard_normal((4, 5)), rng.standard_normal(4)
        e_gat = gat_scores(GatLayerParams.shared_weights(W, a), H, g, 0.2).value
        e_gate = gate_scores(GateLayerParams.shared_weights(W, a, a), H, g, 0.2).value
        np.testing.assert_array_equal(e_gat, e_gate)

    @pytest.mark.parametrize("seed", range(5))
    def test_fused_scores_match_composed(self, seed, monkeypatch):
        rng = np.random.default_rng(seed)
        g = random_graph(15, 0.3, seed)
        H = rng.standard_normal((15, 4))
        for p, fn in ((random_gat(rng, 4, 6, False), gat_scores), (random_gate(rng, 4, 6, False), gate_scores)):
            fused = fn(p, H, g).value
            monkeypatch.setattr(L, "FUSED_SCORES", False)
            composed = fn(p, H, g).value
            monkeypatch.setattr(L, "FUSED_SCORES", True)
            np.testing.assert_allclose(fused, composed, rtol=1e-13, atol=1e-13)


class TestAttentionCoefficients:
    def test_three_equal_neighbors(self):
        g = add_self_loops(Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)]))
        alpha = attention_coefficients(np.zeros(g.num_edges), g).value
        np.testing.assert_allclose(alpha, 1 / 3, rtol=1e-15)

    def test_isolated_node(self):
        g = add_self_loops(Graph.from_edges(3, [(0, 1)]))
        alpha = attention_coefficients(np.arange(g.num_edges, dtype=float), g).value
        assert alpha[g.self_loop_positions[2]] == 1.0

    def test_ln2(self):
        g = add_self_loops(Graph.from_edges(3, [(0, 1), (0, 2)]))
        e = np.zeros(g.num_edges)
        e[0] = np.log(2.0)  # node 0's row is (0, 1, 2)
        np.testing.assert_allclose(attention_coefficients(e, g).value[:3], [0.5, 0.25, 0.25], rtol=1e-14)


class TestLayerForward:
    def test_isolated_identity_relu(self):
        g = add_self_loops(Graph.from_edges(1, []))
        p = GateLayerParams.shared_weights(np.eye(3), np.zeros(3), np.zeros(3))
        h = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(layer_forward(p, h, g, "relu").value, [[1.0, 0.0, 0.5]])

    def test_uniform_alpha_equal_rows(self, rng):
        g = add_self_loops(Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)]))
        M = rng.standard_normal((2, 3))
        h = np.tile(rng.standard_normal(3), (3, 1))
        p = GateLayerParams.shared_weights(M, np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(layer_forward(p, h, g, "relu").value, np.maximum(h @ M.T, 0), rtol=1e-14)

    @pytest.mark.parametrize("kind", ["gat", "gat_s", "gate", "gate_s"])
    @pytest.mark.parametrize("seed", range(5))
    def test_path_matches_dense_oracle(self, kind, seed):
        rng = np.random.default_rng(seed)
        g = add_self_loops(Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)]))
        H = rng.standard_normal((4, 3))
        maker = random_gat if kind.startswith("gat") and not kind.startswith("gate") else random_gate
        p = maker(rng, 3, 5, kind.endswith("_s"))
        spec = LayerSpec(kind, 5)
        out = layer_forward(p, H, g, spec.activation, spec.hidden_slope, spec.score_slope).value
        ref, _ = dense_attention_layer(kind, p, H, g.to_dense(), spec.activation, spec.hidden_slope, spec.score_slope)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self, rng):
        g = random_graph(5, 0.5, 0)
        with pytest.raises(ValueError):
            layer_forward(random_gate(rng, 3, 4, False), rng.standard_normal((5, 2)), g)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_exhaustive_small_graphs(self, n):
        rng = np.random.default_rng(n)
        for g in all_small_graphs(n):
            for kind in ("gat", "gate"):
                p = (random_gat if kind == "gat" else random_gate)(rng, 2, 3, False)
                H = rng.standard_normal((n, 2))
                spec = LayerSpec(kind, 3)
                out, alpha = layer_forward(p, H, g, spec.activation, spec.hidden_slope, spec.score_slope,
                                           return_alpha=True)
                ref, ref_alpha = dense_attention_layer(kind, p, H, g.to_dense(), spec.activation,
                                                       spec.hidden_slope, spec.score_slope)
                np.testing.assert_allclose(out.value, ref, rtol=1e-12, atol=1e-12)
                np.testing.assert_allclose(alpha.value, ref_alpha[g.targets.ids, g.neighbors], atol=1e-12)


class TestMlpLayer:
    def test_identity_on_nonnegative(self, rng):
        H = np.abs(rng.standard_normal((4, 3)))
        np.testing.assert_array_equal(mlp_layer_forward(np.eye(3), H, "relu").value, H)

    def test_zero_weights(self, rng):
        np.testing.assert_array_equal(mlp_layer_forward(np.zeros((2, 3)), rng.standard_normal((4, 3))).value, 0.0)

    def test_equals_attention_layer_on_edgeless_graph(self, rng):
        g = add_self_loops(Graph.from_edges(5, []))
        W, H = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
        p = GateLayerParams(W, rng.standard_normal((3, 4)), rng.standard_normal((3, 4)),
                            rng.standard_normal(3), rng.standard_normal(3))
        np.testing.assert_allclose(layer_forward(p, H, g, "relu").value, mlp_layer_forward(W, H, "relu").value,
                                   rtol=1e-14)


class TestNetwork:
    def test_single_mlp_identity_raw(self, rng):
        spec = NetworkSpec([LayerSpec("mlp", 3)])
        H = rng.standard_normal((4, 3))
        out = network_forward(spec, [MlpLayerParams(np.eye(3))], H, random_graph(4, 0.5, 0)).logits.value
        np.testing.assert_array_equal(out, H)  # negative entries survive: no trailing activation

    def test_mixed_stack_and_alpha_vv(self, rng):
        spec = NetworkSpec([LayerSpec("gate", 6), LayerSpec("mlp", 6), LayerSpec("gate", 3)])
        g = random_graph(12, 0.3, 4)
        params = init_network(spec, 4, InitPolicy(seed=1))
        fp = network_forward(spec, params, rng.standard_normal((12, 4)), g)
        assert fp.logits.shape == (12, 3)
        assert fp.alphas[1] is None
        vv = fp.alpha_vv(g)
        np.testing.assert_array_equal(vv[1], 1.0)
        np.testing.assert_allclose(vv[0], 1.0 / g.degrees, rtol=1e-14)  # zero-attention init

    def test_forced_self_attention_reproduces_mlp(self, rng):
        g = random_graph(10, 0.3, 5)
        H = rng.random((10, 4)) + 0.1
        W1, W2 = rng.random((6, 4)) + 0.1, rng.random((3, 6)) + 0.1
        # positive inputs and weights keep every score pre-activation positive,
        # so a_t >> 0 > a_s pushes alpha_vv to exactly 1.0 in float64
        big = 1e4
        params = [GateLayerParams.shared_weights(W, -big * np.ones(W.shape[0]), big * np.ones(W.shape[0]))
                  for W in (W1, W2)]
        spec = NetworkSpec([LayerSpec("gate_s", 6), LayerSpec("gate_s", 3)])
        fp = network_forward(spec, params, H, g)
        for vv in fp.alpha_vv(g):
            np.testing.assert_array_equal(vv, 1.0)
        ref = mlp_layer_forward(W2, mlp_layer_forward(W1, H, "relu"), None).value
        np.testing.assert_allclose(fp.logits.value, ref, rtol=1e-14)

    def test_width_mismatch(self, rng):
        spec = NetworkSpec.uniform("gate", 2, 3, 4)
        params = init_network(spec, 5, InitPolicy())
        with pytest.raises(ValueError):
            network_forward(spec, params, rng.standard_normal((6, 4)), random_graph(6, 0.5, 0))

    def test_wrong_kind_rejected(self):
        spec = NetworkSpec.uniform("gat_s", 2, 3, 4)
        params = init_network(NetworkSpec.uniform("gat", 2, 3, 4), 5, InitPolicy())
        with pytest.raises(ValueError):
            L.check_params(spec, params, 5)

    @pytest.mark.parametrize("kind", ["gat", "gat_s", "gate", "gate_s", "mlp"])
    def test_network_matches_dense(self, kind):
        g = random_graph(8, 0.4, 9)
        spec, params = random_network(kind, 3, 5, 3, 2, 0)
        H = np.random.default_rng(1).standard_normal((8, 3))
        np.testing.assert_allclose(network_forward(spec, params, H, g).logits.value,
                                   dense_network(spec, params, H, g.to_dense()), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("kind", ["gat", "gat_s", "gate", "gate_s", "mlp"])
    def test_network_with_bias_matches_dense(self, kind):
        g = random_graph(8, 0.4, 10)
        spec, params = random_network(kind, 3, 5, 3, 2, 1, bias=True)
        H = np.random.default_rng(2).standard_normal((8, 3))
        np.testing.assert_allclose(network_forward(spec, params, H, g).logits.value,
                                   dense_network(spec, params, H, g.to_dense()), rtol=1e-12, atol=1e-12)

    def test_bias_presence_checked(self):
        spec = NetworkSpec.uniform("gate", 2, 3, 4, bias=True)
        params = init_network(NetworkSpec.uniform("gate", 2, 3, 4), 5, InitPolicy())
        with pytest.raises(ValueError):
            L.check_params(spec, params, 5)
        biased = init_network(spec, 5, InitPolicy())
        assert all(np.array_equal(p.b, np.zeros(w)) for p, w in zip(biased, (4, 3)))
        np.testing.assert_array_equal(biased[0].W, params[0].W)

    def test_shared_parameter_single_gradient(self, rng):
        spec = NetworkSpec.uniform("gate_s", 2, 3, 4)
        params = init_network(spec, 3, InitPolicy(attention_scheme="xavier_uniform"))
        g = random_graph(6, 0.5, 0)
        fp = network_forward(spec, params, rng.standard_normal((6, 3)), g)
        grads = fp.tape.backward(ad.softmax_cross_entropy(fp.logits, rng.integers(0, 3, 6), np.ones(6, bool)))
        assert set(grads) == {"0.W", "0.a_s", "0.a_t", "1.W", "1.a_s", "1.a_t"}


class TestSpec:
    def test_defaults_per_kind(self):
        assert LayerSpec("gat", 4).activation == "leaky_relu"
        assert LayerSpec("gat", 4).score_slope == 0.2
        assert LayerSpec("gate", 4).activation == "relu"
        assert LayerSpec("gate", 4).score_slope == 0.0
        assert LayerSpec("mlp", 4).activation == "relu"

    def test_json_round_trip(self):
        spec = NetworkSpec.alternating(4, 3, 8)
        back = NetworkSpec.from_json(spec.to_json())
        assert back == spec
        assert [l.kind for l in back.layers] == ["gat", "mlp", "gat", "mlp"]

    def test_fragment_format(self):
        spec = NetworkSpec.from_json('{"layers":[{"kind":"gate","width":64},{"kind":"gate","width":2}]}')
        assert spec.depth == 2 and spec.num_classes == 2

    @pytest.mark.parametrize("bad", [{"kind": "gcn", "width": 3}, {"kind": "gat", "width": 0},
                                     {"kind": "gat", "width": 3, "activation": "tanh"}])
    def test_invalid_layer(self, bad):
        with pytest.raises(ValueError):
            LayerSpec(**bad)

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown"):
            NetworkSpec.from_dict({"layers": [{"kind": "gat", "width": 3, "heads": 2}]})


def test_tape_free_inputs_share_a_tape(rng):
    p = random_gate(rng, 2, 2, False)
    t = Tape()
    out = layer_forward(p, t.constant(rng.standard_normal((3, 2))), random_graph(3, 1.0, 0))
    assert out.tape is t


@pytest.mark.parametrize("kind", ["gat", "gat_s", "gate", "gate_s", "mlp"])
@pytest.mark.parametrize("bias", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_loss_gradient_matches_finite_differences(kind, bias, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(6, 0.5, seed)
    H = rng.standard_normal((6, 3))
    y, mask = rng.integers(0, 2, 6), np.ones(6, bool)
    spec, params = random_network(kind, 2, 4, 3, 2, seed, bias=bias)
    flat = L.flatten_params(params)
    fp = network_forward(spec, params, H, g)
    grads = fp.tape.backward(ad.softmax_cross_entropy(fp.logits, y, mask))
    for name, theta in flat.items():
        def f(t, name=name):
            moved = L.unflatten_params(params, {**flat, name: t})
            return float(ad.softmax_cross_entropy(network_forward(spec, moved, H, g).logits, y, mask).value)

        fd = ad.finite_difference_grad(f, theta)
        err = np.abs(fd - grads[name]).max() / max(np.abs(fd).max(), 1e-10)
        assert err < 1e-5, name
