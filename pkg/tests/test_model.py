import numpy as np
import pytest

from teggcn import autodiff as ad
from teggcn.autodiff import Tape
from teggcn.datasets import SynthSpec, generate_synthetic
from teggcn.graph import build_graph, normalize_adjacency
from teggcn.model import (CHECKPOINT_VERSION, GGCN, SOFTPLUS_INV_ONE, LayerParams, ModelConfig,
                          degree_scaling, ggcn_layer, init_layer, load_checkpoint, model_forward,
                          predict_proba, prepare, save_checkpoint, sign_matrices)
from teggcn.optim import AdamState, adam_step

from conftest import path_graph, random_graph

NEG = -1e4  # exp underflows to exactly 0 in float64


def layer_with(weight, bias, beta_raw, coef=(0.0, SOFTPLUS_INV_ONE)):
    p = init_layer(np.random.default_rng(0), weight.shape[0], weight.shape[1], "t")
    p.weight.data[...] = weight
    p.bias.data[...] = bias
    p.beta_raw.data[...] = beta_raw
    p.degree_coef.data[...] = coef
    return p


def test_sign_matrix_examples():
    f = np.array([[1.0, 2.0], [1.0, 2.0], [-1.0, -2.0]])
    adj = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], float)
    pos, neg = sign_matrices(f, adj)
    assert pos.data[0, 1] == pytest.approx(1.0) and neg.data[0, 1] == 0.0
    assert neg.data[0, 2] == pytest.approx(-1.0) and pos.data[0, 2] == 0.0
    # (1, 2) is not an edge
    assert pos.data[1, 2] == 0.0 and neg.data[1, 2] == 0.0
    assert np.all(np.diag(pos.data) == 0)


@pytest.mark.parametrize("seed", range(5))
def test_layer_state_sign_invariants(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 15, 0.3)
    ctx = prepare(g)
    p = init_layer(rng, 5, 4, "l")
    _, state = ggcn_layer(ctx.features, p, ctx)
    s = state.sign_dense()
    assert np.all(np.abs(s) <= 1 + 1e-12)
    assert np.all(np.diag(s) == 0)
    assert np.all(s[g.adjacency().toarray() == 0] == 0)
    pos, neg = sign_matrices(state.transformed.data, g.adjacency().toarray())
    np.testing.assert_allclose(pos.data + neg.data, s, atol=1e-14)
    assert np.all(pos.data >= 0) and np.all(neg.data <= 0)


def test_degree_scaling_examples():
    r = np.array([0.3, 1.0, 2.5])
    np.testing.assert_allclose(degree_scaling(r, [0.0, SOFTPLUS_INV_ONE]).data.ravel(), 1.0, atol=1e-6)
    inc = degree_scaling(r, [0.7, -0.2]).data.ravel()
    assert np.all(np.diff(inc) > 0)
    assert degree_scaling([0.0], [1.0, 0.0]).data.item() == pytest.approx(np.log(2), abs=1e-12)


def test_beta_identity_reduces_to_dense_layer():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 10, 0.4, feature_dim=3)
    ctx = prepare(g)
    w, b = rng.standard_normal((3, 2)), rng.standard_normal(2)
    out, state = ggcn_layer(ctx.features, layer_with(w, b, [0.0, NEG, NEG]), ctx)
    alpha = state.alpha.data
    expect = ad.elu(alpha * (g.features @ w + b)).data
    np.testing.assert_allclose(out.data, expect, atol=1e-14)


def test_isolated_node():
    g = build_graph([], 1, features=[[0.5, -1.0]])
    ctx = prepare(g)
    w, b = np.array([[1.0], [2.0]]), np.array([0.1])
    out, state = ggcn_layer(ctx.features, layer_with(w, b, [0.3, -0.2, 0.5], (0.4, 0.1)), ctx)
    alpha = np.log1p(np.exp(0.4 * 1.0 + 0.1))
    beta0 = np.exp(0.3) / np.exp([0.3, -0.2, 0.5]).sum()
    assert out.data.item() == pytest.approx(np.expm1(alpha * beta0 * (-1.4)), abs=1e-14)


def test_path_hand_evaluation():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    g = path_graph(3, features=x)
    w = np.array([[1.0, -1.0], [0.5, 2.0]])
    b = np.array([0.0, -0.5])
    raw = np.array([0.2, 0.4, -0.3])
    coef = (0.5, 0.1)
    out, _ = ggcn_layer(prepare(g).features, layer_with(w, b, raw, coef), prepare(g))
    # written out term by term for the path 0-1-2 (degrees 1, 2, 1)
    hh = x @ w + b
    beta = np.exp(raw) / np.exp(raw).sum()
    cos01 = hh[0] @ hh[1] / np.linalg.norm(hh[0]) / np.linalg.norm(hh[1])
    cos12 = hh[1] @ hh[2] / np.linalg.norm(hh[1]) / np.linalg.norm(hh[2])
    a = 1 / np.sqrt(2 * 3)
    prop_pos = np.zeros((3, 2))
    prop_neg = np.zeros((3, 2))
    for i, j, c in [(0, 1, cos01), (1, 0, cos01), (1, 2, cos12), (2, 1, cos12)]:
        (prop_pos if c > 0 else prop_neg)[i] += c * a * hh[j]
    r = np.array([np.sqrt(2 / 3), (np.sqrt(3 / 2) * 2) / 2, np.sqrt(2 / 3)])
    alpha = np.log1p(np.exp(coef[0] * r + coef[1]))[:, None]
    mixed = alpha * (beta[0] * hh + beta[1] * prop_pos + beta[2] * prop_neg)
    expect = np.where(mixed > 0, mixed, np.expm1(mixed))
    np.testing.assert_allclose(out.data, expect, atol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_gcn_reduction(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 12, 0.3, feature_dim=4)
    ctx = prepare(g)
    w = rng.standard_normal((4, 3))
    hat = g.adjacency().toarray() + np.eye(12)
    p = layer_with(w, np.zeros(3), [NEG, 0.0, NEG])
    out, _ = ggcn_layer(ctx.features, p, ctx, degree_scale=False, signs=(hat, np.zeros_like(hat)))
    d = hat.sum(1)
    gcn = (hat / np.sqrt(np.outer(d, d))) @ g.features @ w
    np.testing.assert_allclose(out.data, np.where(gcn > 0, gcn, np.expm1(gcn)), atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_edge_path_matches_dense_path(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 14, 0.3)
    ctx = prepare(g)
    p = init_layer(rng, 5, 3, "l")
    p.beta_raw.data[...] = rng.standard_normal(3)
    p.degree_coef.data[...] = rng.standard_normal(2)
    sparse_out, state = ggcn_layer(ctx.features, p, ctx)
    signs = sign_matrices(state.transformed.data, g.adjacency().toarray())
    dense_out, _ = ggcn_layer(ctx.features, p, ctx, signs=(signs[0].data, signs[1].data))
    np.testing.assert_allclose(sparse_out.data, dense_out.data, atol=1e-13)


def test_layer_shape_error():
    g = path_graph(3, features=np.ones((3, 2)))
    with pytest.raises(ad.ShapeError):
        ggcn_layer(prepare(g).features, init_layer(np.random.default_rng(0), 5, 2, "x"), prepare(g))


def small_graph(seed=0, n=40):
    return generate_synthetic(SynthSpec(num_nodes=n, num_classes=3, mean_degree=4, feature_dim=6, seed=seed))


def test_untrained_logits_finite_and_proba():
    g = small_graph()
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8))
    z = model_forward(g, m)
    assert z.shape == (40, 3) and np.all(np.isfinite(z.data))
    np.testing.assert_allclose(predict_proba(z).sum(1), 1.0, atol=1e-12)


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_layer_count(layers):
    m = GGCN(6, ModelConfig(num_layers=layers, num_classes=3, hidden_dim=8))
    model_forward(small_graph(), m)
    assert len(m.last_states) == layers


def test_no_head_emits_classes_from_last_layer():
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8, output_head=False))
    assert m.head_weight is None
    assert model_forward(small_graph(), m).shape == (40, 3)
    assert m.layers[-1].weight.shape == (8, 3)


def test_forward_deterministic_with_dropout():
    g = small_graph()
    ctx = prepare(g)
    a = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8), seed=3)
    b = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8), seed=3)
    za = a(ctx, True, np.random.default_rng(9)).data
    zb = b(ctx, True, np.random.default_rng(9)).data
    assert np.array_equal(za, zb)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = small_graph(seed)
    perm = rng.permutation(g.num_nodes)
    inv = np.argsort(perm)
    # node i of the new graph is node perm[i] of the old one
    gp = build_graph(inv[g.edges.T], g.num_nodes, g.features[perm], g.labels[perm])
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8), seed=seed)
    z = model_forward(g, m).data
    zp = model_forward(gp, m).data
    np.testing.assert_allclose(zp, z[perm], atol=1e-12)


def test_betas_stay_on_simplex_during_training():
    g = small_graph()
    ctx = prepare(g)
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8), seed=1)
    st = AdamState(lr=0.5)
    for _ in range(10):
        with Tape():
            loss = ad.cross_entropy_masked(m(ctx), g.labels, g.train_mask)
        ad.backward(loss, m.parameters())
        adam_step(m.parameters(), None, st)
        for layer in m.layers:
            b = layer.betas()
            assert np.all(b > 0) and abs(b.sum() - 1) < 1e-12


def test_init_conventions():
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8))
    for layer in m.layers:
        assert layer.beta_raw.data.tolist() == [0.0, 0.0, 0.0]
        assert not layer.bias.decay and not layer.beta_raw.decay and not layer.degree_coef.decay
        assert layer.weight.decay
    assert len(m.named_parameters()) == len(m.parameters())


def test_checkpoint_round_trip(tmp_path):
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8, num_layers=3), seed=5, dtype=np.float32)
    path = save_checkpoint(m, tmp_path / "m.npz")
    back = load_checkpoint(path)
    assert back.config == m.config and back.dtype == m.dtype
    for k, v in m.state_dict().items():
        w = back.state_dict()[k]
        assert w.dtype == v.dtype and w.tobytes() == v.tobytes()
    g = small_graph()
    assert np.array_equal(model_forward(g, m).data, model_forward(g, back).data)


def test_checkpoint_version_check(tmp_path):
    import json

    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=4))
    arrays = m.state_dict()
    meta = dict(version=CHECKPOINT_VERSION + 1, config={}, dtype="<f8", num_features=6)
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(tmp_path / "bad.npz", **arrays)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "bad.npz")


def test_load_state_dict_shape_mismatch():
    a = GGCN(6, ModelConfig(num_classes=3, hidden_dim=4))
    b = GGCN(6, ModelConfig(num_classes=3, hidden_dim=5))
    with pytest.raises(ValueError, match="shape"):
        a.load_state_dict(b.state_dict())


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(num_layers=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout_rate=1.0)


def test_correction_passes_as_constant():
    g = small_graph()
    ctx = prepare(g)
    m = GGCN(6, ModelConfig(num_classes=3, hidden_dim=8, output_head=False), seed=2)
    off = np.zeros(40)
    off[[3, 7]] = [0.4, 1.1]
    z0, z1 = m(ctx).data, m(ctx, correction=off).data
    np.testing.assert_allclose(z1 - z0, np.broadcast_to(off[:, None], z0.shape), atol=1e-12)
