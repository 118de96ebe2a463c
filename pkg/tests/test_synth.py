import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ngcausal.exceptions import ConfigurationError, InputError
from ngcausal.synth import (
    CoupledAgentSpec,
    VarSpec,
    gen_coupled_agents,
    gen_var,
    linear_gc_oracle,
    load_spec,
    random_var_spec,
    spectral_radius,
    support_metrics,
)

SMALL = dict(n_a=3, n_b=3, T=125, n_trials=2)


# --- VAR -------------------------------------------------------------------------------------


def test_zero_var_is_noise_with_empty_truth():
    out = gen_var(VarSpec(np.zeros((2, 3, 3)), T=200))
    assert not out.truth.any()
    assert out.dataset.shape == (1, 200, 3)
    assert out.dataset.data.min() == 0 and out.dataset.data.max() == 1


def test_single_edge_var():
    coef = np.zeros((1, 2, 2))
    coef[0, 1, 0] = 0.8
    out = gen_var(VarSpec(coef, T=1500))
    assert out.truth.tolist() == [[False, False], [True, False]]
    p, adj = linear_gc_oracle(out.dataset.data, 1, alpha=0.01)
    assert adj[1, 0] and not adj[0, 1]


def test_unstable_var_names_radius():
    with pytest.raises(ConfigurationError, match="1.2000"):
        gen_var(VarSpec(np.full((1, 1, 1), 1.2)))


def test_random_spec_properties():
    spec = random_var_spec(p=10, lag_order=3, density=0.2, seed=4)
    assert spec.adjacency().sum() == 18
    assert spectral_radius(spec.coef) <= 0.95
    # each edge acts at exactly one lag
    assert np.all((spec.coef != 0).sum(axis=0)[spec.adjacency()] == 1)


def test_var_is_reproducible():
    a = gen_var(random_var_spec(seed=3, T=300))
    b = gen_var(random_var_spec(seed=3, T=300))
    np.testing.assert_array_equal(a.dataset.data, b.dataset.data)
    c = gen_var(random_var_spec(seed=4, T=300))
    assert not np.array_equal(a.dataset.data, c.dataset.data)


def test_spectral_radius_of_ar1():
    assert spectral_radius(np.full((1, 1, 1), -0.7)) == pytest.approx(0.7)
    # x_t = 0.5 x_{t-1} + 0.3 x_{t-2}: roots of z^2 - 0.5 z - 0.3
    assert spectral_radius(np.array([[[0.5]], [[0.3]]])) == pytest.approx((0.5 + np.sqrt(1.45)) / 2)


# --- coupled agents --------------------------------------------------------------------------


def test_default_coupled_shape_and_truth():
    spec = CoupledAgentSpec()
    assert spec.delay_frames == 25
    adj, lags = spec.truth()
    assert adj.shape == (27, 27)
    assert not adj[:13, 13:].any(), "no edges from B to A"
    assert adj[13:, :13].sum() == 13
    assert np.allclose(lags[13:, :13][adj[13:, :13]], 0.5)
    assert np.isnan(lags[~adj]).all()


def test_coupled_dataset_layout():
    out = gen_coupled_agents(CoupledAgentSpec(**SMALL))
    ds = out.dataset
    assert ds.shape == (2, 125, 6) and ds.agent_split == 3 and ds.sampling_rate == 50.0
    assert ds.labels[:3] == ["P_j00", "P_j01", "P_j02"] and ds.labels[3] == "B_j00"
    assert np.all((ds.data >= 0) & (ds.data <= 1))


def test_coupling_map_defaults_to_downstream_a():
    assert CoupledAgentSpec(n_a=5, n_b=3).coupling == [(0, 2), (1, 3), (2, 4)]
    assert CoupledAgentSpec(n_a=5, n_b=3, n_coupled=1).coupling == [(0, 4)]


def test_agent_a_ignores_b():
    with_coupling = gen_coupled_agents(CoupledAgentSpec(**SMALL)).dataset.data
    without = gen_coupled_agents(CoupledAgentSpec(coupling_gain=0.0, **SMALL)).dataset.data
    np.testing.assert_array_equal(with_coupling[..., :3], without[..., :3])
    assert not np.array_equal(with_coupling[..., 3:], without[..., 3:])


def test_zero_gain_removes_cross_edges_from_truth():
    adj, _ = CoupledAgentSpec(coupling_gain=0.0).truth()
    assert not adj[13:, :13].any()


def test_trials_differ_and_seed_reproduces():
    a = gen_coupled_agents(CoupledAgentSpec(**SMALL)).dataset.data
    b = gen_coupled_agents(CoupledAgentSpec(**SMALL)).dataset.data
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a[0], a[1])


def test_coupled_spec_errors():
    with pytest.raises(ConfigurationError, match="shorter than the series"):
        CoupledAgentSpec(coupling_delay=2.5, T=125)
    with pytest.raises(ConfigurationError):
        CoupledAgentSpec(persistence=1.0)
    with pytest.raises(ConfigurationError):
        CoupledAgentSpec(coupling=[(5, 0)], n_b=3)
    with pytest.raises(ConfigurationError):
        CoupledAgentSpec(coupling_gain=float("inf"))
    with pytest.raises(ConfigurationError, match="unknown"):
        CoupledAgentSpec.from_dict({"n_agents": 3})


def test_linear_coupling_is_visible_to_linear_oracle():
    spec = CoupledAgentSpec(n_a=2, n_b=2, T=400, n_trials=4, coupling_delay=0.1, pulse_gain=0.0)
    # the lag window must cover the colored-noise memory (intra lag + 1) or B leaks A history back
    p, adj = linear_gc_oracle(gen_coupled_agents(spec).dataset.data, 10, alpha=0.01, conditioning="full")
    assert adj[2, 0] and adj[3, 1]
    assert not adj[:2, 2:].any()


def test_even_nonlinearity_hides_coupling_from_linear_oracle():
    # tanh(c u)^2 is even in u, so a Gaussian driver leaves no cross-covariance
    u = np.random.default_rng(0).normal(size=200_000)
    f = np.tanh(1.5 * u) ** 2
    assert abs(np.corrcoef(u, f)[0, 1]) < 0.01


def test_spec_json_round_trip(tmp_path):
    spec = CoupledAgentSpec(**SMALL, seed=7)
    (tmp_path / "s.json").write_text(json.dumps({"kind": "coupled", **spec.to_dict()}))
    again = load_spec(tmp_path / "s.json")
    assert again == spec
    (tmp_path / "v.json").write_text(json.dumps({"kind": "var", "p": 4, "seed": 2}))
    assert load_spec(tmp_path / "v.json").p == 4
    (tmp_path / "x.json").write_text(json.dumps({"kind": "lorenz"}))
    with pytest.raises(ConfigurationError):
        load_spec(tmp_path / "x.json")


# --- oracle ----------------------------------------------------------------------------------


def _chain(T=3000, seed=0):
    coef = np.zeros((1, 3, 3))
    coef[0, 1, 0] = coef[0, 2, 1] = 0.8
    return gen_var(VarSpec(coef, T=T, seed=seed)).dataset.data


def test_full_conditioning_drops_relayed_edge():
    data = _chain()
    _, pair = linear_gc_oracle(data, 2, alpha=0.01, conditioning="pairwise")
    _, full = linear_gc_oracle(data, 2, alpha=0.01, conditioning="full")
    assert pair[2, 0], "pairwise tests see the relayed influence"
    assert not full[2, 0]
    assert full[1, 0] and full[2, 1]


def test_oracle_diagonal_is_nan_and_length_checked():
    p, adj = linear_gc_oracle(_chain(T=300), 2)
    assert np.isnan(np.diag(p)).all() and not np.diag(adj).any()
    with pytest.raises(ConfigurationError, match="2\\*max_lag"):
        linear_gc_oracle(np.zeros((1, 5, 2)), 2)


def test_oracle_rank_deficient_gives_nan(rng):
    data = rng.random((1, 200, 3))
    data[..., 2] = data[..., 1]
    p, _ = linear_gc_oracle(data, 2, conditioning="full")
    assert np.isnan(p[0, 1]) and np.isnan(p[0, 2])


@settings(max_examples=20)
@given(seed=st.integers(0, 10_000))
def test_oracle_pvalues_are_probabilities(seed):
    rng = np.random.default_rng(seed)
    p, adj = linear_gc_oracle(rng.random((2, 60, 3)), 3)
    off = ~np.eye(3, dtype=bool)
    assert np.all((p[off] >= 0) & (p[off] <= 1))


# --- scoring ---------------------------------------------------------------------------------


def test_support_metrics_perfect_and_inverted():
    truth = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=bool)
    perfect = support_metrics(truth.astype(float), truth)
    assert perfect["f1"] == 1 and perfect["auroc"] == 1
    inverted = support_metrics(1.0 - truth, truth)
    assert inverted["auroc"] == 0 and inverted["tp"] == 0


def test_support_metrics_threshold_and_mask():
    truth = np.array([[0, 1, 0], [0, 0, 0], [1, 0, 0]], dtype=bool)
    est = np.array([[9, 0.5, 0.2], [0.1, 9, 0.0], [0.6, 0.0, 9]])
    m = support_metrics(est, truth, threshold=0.3)
    assert (m["tp"], m["fp"], m["fn"]) == (2, 0, 0)
    m = support_metrics(est, truth, threshold=0.3, mask=np.tril(np.ones((3, 3), bool)))
    assert m["n"] == 3 and (m["tp"], m["fn"]) == (1, 0)


def test_support_metrics_shape_error():
    with pytest.raises(InputError):
        support_metrics(np.zeros((2, 3)), np.zeros((2, 3), bool))


def test_oracle_null_pvalues_are_uniform():
    """500 independent white-noise pairs: p-values of both directions pooled."""
    pvals = []
    for seed in range(500):
        x = np.random.default_rng(seed).normal(size=(1, 120, 2))
        p, _ = linear_gc_oracle(x, 2)
        pvals += [p[0, 1], p[1, 0]]
    assert stats.kstest(pvals, "uniform").statistic < 0.1


def test_random_scores_give_chance_auroc():
    aurocs = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        truth = rng.random((10, 10)) < 0.3
        aurocs.append(support_metrics(rng.random((10, 10)), truth)["auroc"])
    assert abs(np.mean(aurocs) - 0.5) < 0.05
