import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teggcn.control import (SelectionResult, TEControlConfig, TEController, TECorrection,
                            apply_correction, labels_for_heterophily, neighbor_subset, node_te,
                            select_nodes, selection_sizes, should_run)
from teggcn.datasets import SynthSpec, generate_synthetic
from teggcn.graph import GraphError, HeterophilyStats, LabelSource, build_graph, node_heterophily
from teggcn.te import SeriesPair, TEConfig, te_plugin

CFG = TEControlConfig()


def stats(h):
    return HeterophilyStats(np.asarray(h, float), 0.0, LabelSource.FULL_LABELS)


def test_cora_sizes():
    assert selection_sizes(2708, CFG) == (136, 14)


def test_selection_size_and_order():
    rng = np.random.default_rng(0)
    h = rng.random(2708)
    deg = rng.integers(0, 50, 2708)
    sel = select_nodes(stats(h), deg, CFG)
    assert sel.selected.size == 14 and sel.candidates.size == 136
    d = deg[sel.selected]
    assert all((d[i], -sel.selected[i]) >= (d[i + 1], -sel.selected[i + 1]) for i in range(13))


def test_equal_heterophily_uses_degree_then_index():
    deg = np.array([3, 5, 5, 1, 5, 2, 0, 4, 5, 5, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1])
    cfg = TEControlConfig(het_fraction=0.2, degree_fraction=1.0)
    sel = select_nodes(stats(np.full(deg.size, 0.5)), deg, cfg)
    assert sel.selected.tolist() == [1, 2, 4, 8, 9]


def test_single_node():
    assert select_nodes(stats([0.0]), np.array([0]), CFG).selected.tolist() == [0]


def test_selection_is_deterministic():
    rng = np.random.default_rng(4)
    h, deg = rng.random(300).round(1), rng.integers(0, 6, 300)
    a = select_nodes(stats(h), deg, CFG, epoch=3)
    b = select_nodes(stats(h), deg, CFG, epoch=3)
    assert np.array_equal(a.selected, b.selected) and a.epoch == 3


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 400), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 2 ** 31 - 1))
def test_selection_properties(n, hf, df, seed):
    rng = np.random.default_rng(seed)
    h = rng.integers(0, 5, n) / 4.0
    deg = rng.integers(0, 8, n)
    cfg = TEControlConfig(het_fraction=hf, degree_fraction=df)
    sel = select_nodes(stats(h), deg, cfg)
    k1, k2 = selection_sizes(n, cfg)
    assert 1 <= sel.selected.size == k2 <= k1
    assert len(set(sel.selected.tolist())) == sel.selected.size
    outside = np.setdiff1d(np.arange(n), sel.candidates)
    if outside.size:
        assert h[sel.selected].min() >= h[outside].max()
    assert set(sel.selected.tolist()) <= set(sel.candidates.tolist())


def test_config_validation():
    with pytest.raises(ValueError):
        TEControlConfig(het_fraction=0.0)
    with pytest.raises(ValueError):
        TEControlConfig(degree_fraction=1.5)
    with pytest.raises(ValueError):
        TEControlConfig(period_epochs=0)
    assert TEControlConfig(label_source="full_labels").label_source is LabelSource.FULL_LABELS


def test_should_run():
    assert [e for e in range(25) if should_run(e, CFG)] == [0, 10, 20]
    assert not any(should_run(e, replace(CFG, enabled=False)) for e in range(25))
    assert all(should_run(e, replace(CFG, period_epochs=1)) for e in range(25))
    with pytest.raises(ValueError):
        should_run(-1, CFG)


def coupled_fixture(n=400, seed=0):
    """Node 0 with two neighbors: node 1 drives it, node 2 is noise."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n).astype(float)
    x = np.empty(n)
    x[0] = 0.0
    x[1:] = y[:-1]
    noise = rng.integers(0, 2, n).astype(float)
    return build_graph([(0, 1), (0, 2)], 3, np.vstack([x, y, noise]), [0, 1, 1])


def test_coupled_neighbor_wins():
    g = coupled_fixture()
    x = g.features
    oracle = [te_plugin(SeriesPair(x[0], x[j])) for j in (1, 2)]
    assert oracle[0] > oracle[1]
    cache = {}
    best, pairs = node_te(g, x, 0, cache=cache)
    assert pairs == 2
    assert best == cache[(0, 1)] > cache[(0, 2)]


def test_single_neighbor_is_pair_value():
    g = coupled_fixture()
    single = build_graph([(0, 1)], 3, g.features, [0, 1, 1])
    cache = {}
    best, pairs = node_te(single, single.features, 0, cache=cache)
    assert pairs == 1 and best == cache[(0, 1)]


def test_constant_vectors_contribute_zero():
    f = np.vstack([np.ones(10), np.ones(10), np.arange(10.0)])
    g = build_graph([(0, 1), (1, 2)], 3, f, [0, 0, 1])
    assert node_te(g, f, 0) == (0.0, 1)
    # constant target: every pair is zero
    assert node_te(g, f, 1)[0] == 0.0


def test_isolated_node_and_short_features():
    g = build_graph([(0, 1)], 3, np.random.default_rng(0).random((3, 10)), [0, 1, 0])
    assert node_te(g, g.features, 2) == (0.0, 0)
    short = build_graph([(0, 1)], 2, np.random.default_rng(0).random((2, 4)), [0, 1])
    with pytest.raises(ValueError, match="too short"):
        node_te(short, short.features, 0)


def test_neighbor_cap():
    g = build_graph([(0, j) for j in range(1, 8)] + [(5, 6), (5, 7), (3, 4)], 8)
    assert neighbor_subset(g, 0, 3).tolist() == [5, 3, 4]
    assert neighbor_subset(g, 0, 100).tolist() == list(range(1, 8))


def test_apply_correction_examples():
    h = np.random.default_rng(0).standard_normal((5, 3))
    assert np.array_equal(apply_correction(h, TECorrection({})).data, h)
    assert np.array_equal(apply_correction(h, TECorrection({2: 0.0})).data, h)
    out = apply_correction(h, TECorrection({2: 0.7})).data
    direct = h.copy()
    direct[2] += 0.7
    np.testing.assert_array_equal(out, direct)
    with pytest.raises(IndexError):
        apply_correction(h, TECorrection({5: 0.1}))
    with pytest.raises(IndexError):
        apply_correction(h, np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.integers(0, 9), st.floats(-5, 5), max_size=6), st.integers(0, 1000))
def test_apply_correction_touches_only_selected_rows(corr, seed):
    h = np.random.default_rng(seed).standard_normal((10, 4))
    out = apply_correction(h, TECorrection(corr)).data
    changed = set(np.flatnonzero(np.any(out != h, axis=1)).tolist())
    assert changed <= set(corr)
    for i, v in corr.items():
        np.testing.assert_allclose(out[i] - h[i], v, atol=1e-12)


def test_labels_for_heterophily():
    g = build_graph([(0, 1)], 3, labels=[2, 1, 0], masks=([True, False, False],) + ([False] * 3,) * 2)
    assert labels_for_heterophily(g, None, LabelSource.FULL_LABELS).tolist() == [2, 1, 0]
    assert labels_for_heterophily(g, [0, 0, 0], LabelSource.TRAIN_PLUS_PREDICTIONS).tolist() == [2, 0, 0]
    with pytest.raises(ValueError):
        labels_for_heterophily(g, None, LabelSource.TRAIN_PLUS_PREDICTIONS)


def synth(seed=0, n=300):
    return generate_synthetic(SynthSpec(num_nodes=n, num_classes=3, mean_degree=6,
                                        target_homophily=0.3, feature_dim=20, seed=seed))


def test_test_label_permutation_leaves_selection_unchanged():
    g = synth()
    preds = np.random.default_rng(1).integers(0, 3, g.num_nodes)
    labels = g.labels.copy()
    test = np.flatnonzero(g.test_mask)
    labels[test] = labels[np.random.default_rng(2).permutation(test)]
    labels[test[:5]] = (labels[test[:5]] + 1) % 3
    g2 = build_graph(g.edges.T, g.num_nodes, g.features, labels,
                     (g.train_mask, g.val_mask, g.test_mask))
    src = LabelSource.TRAIN_PLUS_PREDICTIONS
    sel = [select_nodes(node_heterophily(x, labels_for_heterophily(x, preds, src), src), x.degrees, CFG)
           for x in (g, g2)]
    assert np.array_equal(sel[0].selected, sel[1].selected)
    assert np.array_equal(sel[0].heterophily_used.per_node, sel[1].heterophily_used.per_node)


def test_controller_schedule_log_and_count(tmp_path):
    g = synth()
    cfg = TEControlConfig(period_epochs=3, label_source=LabelSource.FULL_LABELS)
    log = tmp_path / "te.jsonl"
    ctl = TEController(g, cfg, seed=0, log_path=log)
    seen = [ctl.update(e) for e in range(7)]
    assert seen[0] is seen[1] is seen[2]
    assert seen[3] is not seen[2] and seen[3].computed_at_epoch == 3
    recs = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 3, 6]
    assert set(recs[0]) == {"epoch", "selected", "max_te", "te_calls", "wall_s"}
    sel = np.array(recs[0]["selected"])
    per_epoch = int(np.minimum(g.degrees[sel], cfg.max_neighbors).sum())
    assert ctl.calls == 3 * per_epoch
    # full labels never change, so later epochs reuse every pair value
    assert ctl.estimator_runs == per_epoch
    assert all(np.isfinite(v) for v in seen[0].per_node_te.values())
    assert set(seen[0].per_node_te) <= set(sel.tolist())


def test_controller_cache_does_not_change_values():
    g = synth(3)
    base = TEControlConfig(label_source=LabelSource.FULL_LABELS, period_epochs=1)
    a = TEController(g, base, seed=2)
    b = TEController(g, replace(base, reuse_pair_values=False), seed=2)
    for e in range(3):
        assert a.update(e).per_node_te == b.update(e).per_node_te
    assert b.estimator_runs == 3 * a.estimator_runs


def test_controller_disabled_returns_none():
    ctl = TEController(synth(), replace(CFG, enabled=False))
    assert ctl.update(0) is None and ctl.calls == 0


def test_offsets_layout():
    off = TECorrection({1: 0.5, 3: -0.25}).offsets(4)
    assert off.shape == (4, 1) and off.ravel().tolist() == [0.0, 0.5, 0.0, -0.25]
    assert isinstance(select_nodes(stats([0.1, 0.2]), np.array([1, 1]), CFG), SelectionResult)
