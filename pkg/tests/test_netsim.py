import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from nngp import DomainError, InputSet, NetworkParams, ResourceError, kernel_at_depth
from nngp.netsim import (Realization, SampleBatch, cross_unit_corr, draw_realization, empirical_cov,
                         forward, lipschitz_witness, sample_network)

X2 = InputSet.from_points([[1.0, 0.0, 0.0], [0.3, 0.8, -0.2]])
P3 = NetworkParams(3, 2.0, 0.1)


def test_layer1_at_zero_input_is_bias_only(relu):
    X = InputSet.from_points([[0.0, 0.0]])
    S, sb = 10**5, 0.1
    b = sample_network(X, NetworkParams(1, 2.0, sb), relu, 5, 1, S, seed=3)[0]
    v = b.values[:, 0, 0]
    assert abs(v.var() - sb) < 4 * math.sqrt(2 / S) * sb
    assert stats.kstest(v / math.sqrt(sb), "norm").pvalue > 0.001


@pytest.mark.parametrize("method", ["weights", "conditional"])
def test_finite_width_is_not_gaussian(identity, method):
    # n = 1, identity: f2 = w2 * (w1 . x), a product of two independent N(0, 1)
    X = InputSet.from_points([[1.0, 0.0]])
    v = sample_network(X, NetworkParams(2, 1.0, 0.0), identity, 1, 1, 10**5, seed=5,
                       method=method)[-1].values[:, 0, 0]
    kurt = np.mean(v**4) / np.mean(v**2) ** 2
    assert 7.5 < kurt < 10.5


def test_determinism_and_threads(relu):
    a = sample_network(X2, P3, relu, 32, 2, 300, seed=9)
    b = sample_network(X2, P3, relu, 32, 2, 300, seed=9, threads=4)
    for x, y in zip(a, b):
        assert x.to_bytes() == y.to_bytes()
    c = sample_network(X2, P3, relu, 32, 2, 300, seed=10)
    assert a[-1].to_bytes() != c[-1].to_bytes()


def test_split_runs_reproduce_long_run(relu):
    full = sample_network(X2, P3, relu, 16, 1, 200, seed=1)[-1].values
    head = sample_network(X2, P3, relu, 16, 1, 120, seed=1)[-1].values
    tail = sample_network(X2, P3, relu, 16, 1, 80, seed=1, first_sample=120)[-1].values
    assert np.array_equal(full, np.concatenate([head, tail]))


def test_weights_sampler_matches_forward_pass(tanh):
    outs = sample_network(X2, P3, tanh, 8, 3, 4, seed=2, method="weights")
    for s in range(4):
        real = draw_realization(X2.I, P3, 8, 3, seed=2, sample=s)
        pre = forward(real, X2, tanh)
        for layer in range(3):
            np.testing.assert_array_equal(outs[layer].values[s], pre[layer][:3])


@pytest.mark.slow
def test_samplers_agree_in_law(relu):
    """Both samplers target the same finite-width law; compare second and fourth moments."""
    S = 40000
    a = sample_network(X2, P3, relu, 3, 1, S, seed=11, method="weights")[-1].values[:, 0, :]
    b = sample_network(X2, P3, relu, 3, 1, S, seed=12, method="conditional")[-1].values[:, 0, :]
    for stat in (lambda v: v[:, 0] ** 2, lambda v: v[:, 0] * v[:, 1], lambda v: v[:, 1] ** 4):
        x, y = stat(a), stat(b)
        se = math.sqrt(x.var() / S + y.var() / S)
        assert abs(x.mean() - y.mean()) < 4.5 * se


def test_wide_network_approaches_kernel(relu):
    K = kernel_at_depth(X2, relu, P3)[-1]
    S = 20000
    b = sample_network(X2, P3, relu, 1024, 1, S, seed=4)[-1]
    emp = empirical_cov(b, 0).entries
    tol = 4 * np.sqrt((np.outer(np.diag(K.entries), np.diag(K.entries)) + K.entries**2) / S)
    assert np.all(np.abs(emp - K.entries) < tol + 0.01)


def test_layer1_ks_exact_for_any_width(relu):
    S = 10**5
    K1 = kernel_at_depth(X2, relu, P3)[0]
    b = sample_network(X2, NetworkParams(1, 2.0, 0.1), relu, 7, 1, S, seed=21)[0]
    for r in range(2):
        p = stats.kstest(b.values[:, 0, r] / math.sqrt(K1.entries[r, r]), "norm").pvalue
        assert p > 0.001


def test_exchangeable_units(relu):
    S = 20000
    b = sample_network(X2, P3, relu, 16, 4, S, seed=8)[-1]
    a01 = np.mean([empirical_cov(b, u).entries for u in (0, 1)], axis=0)
    a23 = np.mean([empirical_cov(b, u).entries for u in (2, 3)], axis=0)
    scale = np.max(np.abs(a01))
    assert np.max(np.abs(a01 - a23)) < 6 * scale * math.sqrt(2 / (2 * S))


def test_memory_budget(relu):
    with pytest.raises(ResourceError, match="memory budget"):
        sample_network(X2, P3, relu, 1000, 1, 1000, seed=0, memory_budget=1e6)


def test_bad_arguments(relu):
    with pytest.raises(DomainError):
        sample_network(X2, P3, relu, 0, 1, 10, seed=0)
    with pytest.raises(DomainError):
        sample_network(X2, P3, relu, 4, 1, 10, seed=0, method="magic")


def test_batch_binary_round_trip(tmp_path, relu):
    b = sample_network(X2, P3, relu, 8, 2, 5, seed=3)[1]
    p = b.save(tmp_path / "b.bin")
    raw = p.read_bytes()
    assert len(raw) == 64 + 8 * 5 * 2 * 2
    back = SampleBatch.load(p)
    assert (back.S, back.U, back.k, back.layer, back.width, back.seed) == (5, 2, 2, 2, 8, 3)
    assert np.array_equal(back.values, b.values)
    b.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "sample,unit,input,value" and len(lines) == 1 + 20


def test_batch_rejects_nonfinite():
    with pytest.raises(DomainError):
        SampleBatch(np.array([[[np.inf]]]), 1, 1, 0)


# -- witness --------------------------------------------------------------------------

def test_witness_examples(relu):
    zero = Realization([np.zeros((3, 2)), np.zeros((3, 3))], [np.zeros(3), np.zeros(3)])
    for w in lipschitz_witness(zero, relu):
        assert np.all(w.constants == 0)
    single = Realization([np.array([[2.0]])], [np.zeros(1)])
    assert lipschitz_witness(single, relu)[0].constants.tolist() == [2.0]
    two = Realization([np.array([[2.0]]), np.array([[-3.0]])], [np.zeros(1), np.zeros(1)])
    assert lipschitz_witness(two, relu)[1].constants.tolist() == [6.0]


def test_witness_needs_lipschitz_constant():
    from nngp import Activation
    act = Activation.from_table([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(DomainError):
        lipschitz_witness(Realization([np.eye(1)], [np.zeros(1)]), act)


@given(st.integers(0, 2**32), st.sampled_from(["relu", "tanh", "erf"]), st.integers(1, 20))
def test_witness_bounds_increments(seed, kind, n):
    from nngp import Activation
    act = Activation.builtin(kind)
    g = np.random.default_rng(seed)
    X = InputSet(g.normal(size=(3, 3)))
    p = NetworkParams(3, 2.0, 0.1)
    real = draw_realization(3, p, n, 2, seed)
    pre = forward(real, X, act)
    for w, f in zip(lipschitz_witness(real, act), pre):
        for a, b in ((0, 1), (0, 2), (1, 2)):
            d = np.linalg.norm(X.X[:, a] - X.X[:, b])
            assert np.all(np.abs(f[:, a] - f[:, b]) <= w.constants * d * (1 + 1e-9))


# -- empirical statistics ------------------------------------------------------------------

def test_empirical_cov_examples():
    const = SampleBatch(np.full((10, 1, 3), 2.0), 1, 1, 0)
    assert np.all(empirical_cov(const, 0).entries == 4.0)
    pm = SampleBatch(np.array([[[1.0]], [[-1.0]]]), 1, 1, 0)
    assert empirical_cov(pm, 0).entries.tolist() == [[1.0]]
    with pytest.raises(DomainError):
        empirical_cov(SampleBatch(np.ones((1, 1, 1)), 1, 1, 0), 0)


def test_empirical_cov_of_exact_gaussian(rng):
    S = 50000
    Sig = np.array([[1.0, 0.4, -0.2], [0.4, 2.0, 0.1], [-0.2, 0.1, 0.5]])
    v = rng.multivariate_normal(np.zeros(3), Sig, size=S)
    emp = empirical_cov(SampleBatch(v[:, None, :], 1, 1, 0), 0).entries
    assert np.all(np.abs(emp - Sig) < 4 * Sig.max() * math.sqrt(2 / S))
    cen = empirical_cov(SampleBatch(v[:, None, :], 1, 1, 0), 0, centered=True).entries
    np.testing.assert_allclose(cen, np.cov(v.T), rtol=1e-12)


def test_cross_unit_examples(rng):
    v = rng.normal(size=(100, 1, 2))
    same = SampleBatch(np.concatenate([v, v], axis=1), 1, 1, 0)
    assert cross_unit_corr(same).max_abs == pytest.approx(1.0)
    neg = SampleBatch(np.concatenate([v, -v], axis=1), 1, 1, 0)
    assert cross_unit_corr(neg).max_abs == pytest.approx(1.0)
    indep = SampleBatch(rng.normal(size=(10**4, 2, 1)), 1, 1, 0)
    assert cross_unit_corr(indep).max_abs < 0.05
    flat = SampleBatch(np.concatenate([v[:, :, :1], np.zeros((100, 1, 1))], axis=1), 1, 1, 0)
    res = cross_unit_corr(flat)
    assert res.skipped == [(0, 1, 0)] and res.max_abs == 0.0
    with pytest.raises(DomainError):
        cross_unit_corr(SampleBatch(v, 1, 1, 0))
