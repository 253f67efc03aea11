from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from subgatt import numcore as nc
from subgatt.errors import ConfigError, DimensionError
from subgatt.graphdata import load_tu_dataset
from subgatt.network import (NetworkConfig, SubGattPool, build_next_level, derive_level_sizes,
                             inter_level_attention, intra_level_attention, load_checkpoint, parameter_count,
                             save_checkpoint, verify_contracts)

from conftest import random_graph

MUTAG = Path(__file__).resolve().parents[1] / "data" / "MUTAG"


def small_model(D=3, C=2, max_nodes=8, **kw):
    cfg = NetworkConfig(**{"K": 8, "T": 3, "dropout": 0.0, **kw})
    return SubGattPool(cfg, D, C, derive_level_sizes(cfg, max_nodes))


# -- level sizes -----------------------------------------------------------


def test_level_sizes_mutag():
    assert derive_level_sizes(NetworkConfig(gamma=0.5, R=3), 28) == [14, 7]


def test_level_sizes_synthetic():
    assert derive_level_sizes(NetworkConfig(gamma=0.75, R=3), 8) == [6, 5]


def test_level_sizes_ties_decrement():
    assert derive_level_sizes(NetworkConfig(gamma=0.9, R=3), 4) == [4, 3]


def test_level_sizes_reaching_zero():
    with pytest.raises(ConfigError):
        derive_level_sizes(NetworkConfig(gamma=0.5, R=4), 3)


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(R=1)
    with pytest.raises(ConfigError):
        NetworkConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        NetworkConfig(K=10, heads=3)


# -- coarsening ------------------------------------------------------------


def test_next_level_identity():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(4, 4))
    z = rng.normal(size=(4, 3))
    a2, x2 = build_next_level(a, z, np.eye(4))
    np.testing.assert_array_equal(a2.value, a)
    np.testing.assert_array_equal(x2.value, z)


def test_next_level_preserves_mass():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(6, 6))
    p = nc.row_softmax(rng.normal(size=(6, 3))).value
    a2, _ = build_next_level(a, rng.normal(size=(6, 2)), p)
    assert a2.value.sum() == pytest.approx(a.sum(), rel=1e-12)


def test_next_level_uniform_assignment():
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(5, 5))
    a2, _ = build_next_level(a, np.zeros((5, 2)), np.full((5, 3), 1 / 3))
    np.testing.assert_allclose(a2.value, np.full((3, 3), a.sum() / 9), rtol=1e-12)


def test_next_level_shape_error():
    with pytest.raises(DimensionError):
        build_next_level(np.zeros((4, 4)), np.zeros((4, 2)), np.zeros((3, 2)))


# -- attention readouts ----------------------------------------------------


def test_intra_single_node():
    x = np.array([[0.3, -1.0, 2.0]])
    v, e = intra_level_attention(np.zeros((1, 1)), x, nc.Value(np.ones((3, 1))))
    np.testing.assert_array_equal(e.value, [[1.0]])
    np.testing.assert_allclose(v.value[:, 0], x[0])


def test_intra_symmetric_uniform():
    a = np.ones((4, 4)) - np.eye(4)
    x = np.tile([[1.0, 2.0, -0.5]], (4, 1))
    v, e = intra_level_attention(a, x, nc.Value(np.array([[0.2], [-0.4], [1.0]])))
    np.testing.assert_allclose(e.value[:, 0], 0.25, rtol=1e-12)
    np.testing.assert_allclose(v.value[:, 0], x.mean(axis=0), rtol=1e-12)


def test_intra_scaling_theta_keeps_argmax():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(5, 5))
    a = (a + a.T) / 2
    x = rng.normal(size=(5, 4))
    theta = rng.normal(size=(4, 1))
    _, e1 = intra_level_attention(a, x, nc.Value(theta))
    _, e2 = intra_level_attention(a, x, nc.Value(3.5 * theta))
    assert np.argmax(e1.value) == np.argmax(e2.value)
    assert not np.allclose(e1.value, e2.value)


def test_inter_single_level():
    x = np.array([[1.0, -2.0]])
    v, e = inter_level_attention(x, nc.Value(np.array([[0.5], [0.1]])))
    np.testing.assert_array_equal(e.value, [[1.0]])
    np.testing.assert_allclose(v.value[:, 0], x[0])


def test_inter_identical_levels():
    x = np.tile([[0.4, 0.9, -1.0]], (3, 1))
    v, _ = inter_level_attention(x, nc.Value(np.random.default_rng(4).normal(size=(3, 1))))
    np.testing.assert_allclose(v.value[:, 0], x[0], rtol=1e-12)


def test_inter_convex_combination():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 6))
    v, e = inter_level_attention(x, nc.Value(rng.normal(size=(6, 1))))
    w = e.value[:, 0]
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(v.value[:, 0], w @ x, rtol=1e-12)


# -- full forward ----------------------------------------------------------


def test_forward_shapes_and_diagnostics():
    rng = np.random.default_rng(6)
    g = random_graph(rng, 7, 0.5)
    model = small_model()
    res = model.forward(g, mode="exhaustive", diagnostics=True, check=True)
    assert res.logits.shape == (1, 2) and res.graph_vector.shape == (8, 1)
    diag = res.diagnostics
    assert [p.shape for p in diag.assignments] == [(7, 4), (4, 2)]
    assert len(diag.inter_weights) == model.config.R - 1
    assert diag.inter_weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_forward_two_levels_uses_single_level_vector():
    rng = np.random.default_rng(7)
    g = random_graph(rng, 6, 0.5)
    model = small_model(R=2)
    diag = model.forward(g, mode="exhaustive", diagnostics=True).diagnostics
    np.testing.assert_array_equal(diag.inter_weights, [[1.0]])


def test_exhaustive_permutation_invariance():
    rng = np.random.default_rng(8)
    model = small_model(K=16)
    for _ in range(5):
        g = random_graph(rng, int(rng.integers(2, 9)), 0.5)
        base = model.forward(g, mode="exhaustive").logits.value
        for _ in range(3):
            moved = model.forward(g.permuted(rng.permutation(g.n)), mode="exhaustive").logits.value
            np.testing.assert_allclose(moved, base, rtol=0, atol=1e-8)


def test_contracts_hold_on_mutag_forward_passes():
    d = load_tu_dataset(MUTAG)
    cfg = NetworkConfig(K=32, seed=2)
    model = SubGattPool(cfg, d.feature_dim, d.num_classes, derive_level_sizes(cfg, d.max_nodes))
    rng = np.random.default_rng(0)
    for i, g in enumerate(d.graphs[:40]):
        model.forward(g, mode="train", epoch=1, stream=i, rng=rng, check=True)
        model.forward(g, mode="eval", stream=i, check=True)


def test_end_to_end_gradient_check(five_node_graph):
    model = small_model()
    loss = lambda: nc.softmax_cross_entropy(model.forward(five_node_graph, mode="exhaustive").logits, [1])
    report = nc.grad_check(loss, model.params, 1e-4)
    assert report.passed, report.errors


@pytest.mark.parametrize("overrides", [{"level1": "gin"}, {"level_attention": False}, {"subgatt_layers": 2},
                                       {"heads": 2}, {"l2_normalize": False}])
def test_variants_run_and_differentiate(five_node_graph, overrides):
    model = small_model(**overrides)
    loss = lambda: nc.softmax_cross_entropy(model.forward(five_node_graph, mode="exhaustive", check=True).logits, [0])
    report = nc.grad_check(loss, model.params, 1e-4)
    assert report.passed, report.errors


def test_no_level_attention_reads_last_single_node(five_node_graph):
    model = small_model(level_attention=False)
    assert model.level_sizes[-1] == 1
    diag = model.forward(five_node_graph, mode="exhaustive", diagnostics=True).diagnostics
    assert diag.inter_weights is None and diag.level_weights == []


def test_float32_mode(five_node_graph):
    model = small_model(dtype="float32")
    assert all(v.value.dtype == np.float32 for v in model.params.values())
    out = model.forward(five_node_graph, mode="exhaustive").logits.value
    ref = small_model().forward(five_node_graph, mode="exhaustive").logits.value
    np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-5)


def test_train_mode_dropout_changes_output(five_node_graph):
    model = small_model(dropout=0.5)
    a = model.forward(five_node_graph, mode="train", rng=np.random.default_rng(0)).logits.value
    b = model.forward(five_node_graph, mode="eval").logits.value
    c = model.forward(five_node_graph, mode="eval").logits.value
    np.testing.assert_array_equal(b, c)
    assert not np.allclose(a, b)


# -- parameter count -------------------------------------------------------


def closed_form_count(K, T, D, C, sizes, heads=1):
    sub = K * T * D + K + sizes[0] * T * D + sizes[0]
    gin = 0
    for n_next in sizes[1:]:
        gin += (1 + K * K + K + K * K + K) + (1 + K * K + K + K * n_next + n_next)
    return sub + gin + 2 * K + K * C + C


def test_parameter_count_closed_form():
    cfg = NetworkConfig(K=16, T=4, R=4, gamma=0.6)
    sizes = derive_level_sizes(cfg, 20)
    total, parts = parameter_count(SubGattPool(cfg, 5, 3, sizes))
    assert total == closed_form_count(16, 4, 5, 3, sizes)
    assert parts["theta"] == 16 and parts["theta_tilde"] == 16


def test_parameter_count_T_term():
    cfg = NetworkConfig(K=16, T=3)
    sizes = [10, 5]
    _, p3 = parameter_count(SubGattPool(cfg, 4, 2, sizes))
    _, p6 = parameter_count(SubGattPool(replace(cfg, T=6), 4, 2, sizes))
    assert p6["level1_embed"] - p3["level1_embed"] == 16 * 3 * 4


# -- checkpoints -----------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path, five_node_graph):
    import json
    model = small_model(heads=2, seed=9)
    path = save_checkpoint(tmp_path / "ckpt.json", model, seed=9, epoch=17)
    assert set(json.loads(path.read_text())) == {"version", "config", "params", "seed", "epoch"}
    back, meta = load_checkpoint(path)
    assert meta == {"seed": 9, "epoch": 17}
    for k, v in model.params.items():
        np.testing.assert_array_equal(back.params[k].value, v.value)
    np.testing.assert_array_equal(back.forward(five_node_graph, mode="exhaustive").logits.value,
                                  model.forward(five_node_graph, mode="exhaustive").logits.value)


def test_verify_contracts_rejects_bad_assignment(five_node_graph):
    diag = small_model().forward(five_node_graph, mode="exhaustive", diagnostics=True).diagnostics
    diag.assignments[0] = diag.assignments[0] * 1.1
    with pytest.raises(Exception, match="row-stochastic"):
        verify_contracts(diag)
