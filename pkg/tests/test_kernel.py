import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nngp import (Activation, CovMatrix, DomainError, InputSet, NetworkParams, QuadratureSpec,
                  RangeError, bivariate_expectation, holder_moment_bound, kernel_at_depth, layer_step,
                  psd_repair)
from nngp.kernel import (abs_normal_moment, base_kernel, bivariate_expectations, read_kernel_csv,
                         write_kernel_csv)


def arccos_relu(vu, vv, c):
    """E[relu(U) relu(V)] from the degree-1 arc-cosine formula."""
    su, sv = math.sqrt(vu), math.sqrt(vv)
    rho = max(-1.0, min(1.0, c / (su * sv)))
    th = math.acos(rho)
    return su * sv * (math.sin(th) + (math.pi - th) * math.cos(th)) / (2 * math.pi)


def arcsin_erf(vu, vv, c):
    """E[erf(U) erf(V)] in closed form."""
    return 2 / math.pi * math.asin(2 * c / math.sqrt((1 + 2 * vu) * (1 + 2 * vv)))


def mc_expectation(act, vu, vv, c, n=10**7, seed=0, chunk=10**6):
    """Monte Carlo mean and standard error of phi(U) phi(V)."""
    g = np.random.default_rng(seed)
    L = np.linalg.cholesky(np.array([[vu, c], [c, vv]]) + 1e-300 * np.eye(2))
    s1 = s2 = 0.0
    for _ in range(n // chunk):
        z = g.standard_normal((2, chunk))
        u, v = L @ z
        p = act(u) * act(v)
        s1 += p.sum()
        s2 += (p * p).sum()
    m = s1 / n
    return m, math.sqrt((s2 / n - m * m) / n)


# -- closed values -----------------------------------------------------------

def test_relu_closed_values(relu):
    assert abs(bivariate_expectation(1, 1, 0, relu) - 1 / (2 * math.pi)) < 1e-9
    assert abs(bivariate_expectation(1, 1, 1, relu) - 0.5) < 1e-9


def test_identity_and_zero_covariance(identity, tanh):
    assert bivariate_expectation(2, 3, 1.2, identity) == pytest.approx(1.2, abs=1e-14)
    # odd activation, zero covariance -> independence -> E = 0
    assert abs(bivariate_expectation(1, 1, 0, tanh)) < 1e-15


@pytest.mark.parametrize("rho", [-1.0, -0.999999, -0.9, -0.3, 0.0, 0.2, 0.5, 0.9, 0.999999, 1.0])
@pytest.mark.parametrize("vu,vv", [(1.0, 1.0), (0.3, 2.5), (4.0, 0.7)])
def test_relu_matches_arccos(relu, rho, vu, vv):
    c = rho * math.sqrt(vu * vv)
    assert bivariate_expectation(vu, vv, c, relu) == pytest.approx(arccos_relu(vu, vv, c), abs=1e-12)


@pytest.mark.parametrize("rho", [-0.95, -0.4, 0.0, 0.6, 0.99])
@pytest.mark.parametrize("vu,vv", [(1.0, 1.0), (0.2, 2.0), (3.0, 5.0)])
def test_erf_matches_arcsin(erf, rho, vu, vv):
    c = rho * math.sqrt(vu * vv)
    assert bivariate_expectation(vu, vv, c, erf) == pytest.approx(arcsin_erf(vu, vv, c), abs=1e-10)


@pytest.mark.parametrize("kind", ["tanh", "relu", "erf"])
@pytest.mark.parametrize("rho", [-0.99, -0.5, 0.0, 0.7, 0.99])
@pytest.mark.parametrize("v", [0.3, 1.0, 2.3, 5.0])
def test_node_doubling_delta(kind, rho, v):
    act = Activation.builtin(kind)
    a = bivariate_expectation(v, v * 0.8, rho * v * math.sqrt(0.8), act, QuadratureSpec(64))
    b = bivariate_expectation(v, v * 0.8, rho * v * math.sqrt(0.8), act, QuadratureSpec(128))
    assert abs(a - b) < 1e-8


@pytest.mark.slow
@pytest.mark.parametrize("kind", ["relu", "tanh", "erf"])
@pytest.mark.parametrize("rho", [-0.9, 0.0, 0.5, 0.99])
def test_monte_carlo_oracle(kind, rho):
    act = Activation.builtin(kind)
    vu, vv = 1.3, 0.8
    c = rho * math.sqrt(vu * vv)
    m, se = mc_expectation(act, vu, vv, c, seed=int(1000 * (rho + 1)))
    assert abs(bivariate_expectation(vu, vv, c, act) - m) < 4 * se


def test_custom_table_against_monte_carlo():
    act = Activation.from_table([-2, -1, 0, 1, 3], [0.5, -1, 0, 2, 1])
    m, se = mc_expectation(act, 1.5, 0.9, 0.7, n=2 * 10**6, seed=4)
    assert abs(bivariate_expectation(1.5, 0.9, 0.7, act) - m) < 4 * se


def test_degenerate_variance_is_point_mass(relu, identity):
    # U = 0: E[phi(0) phi(V)] = 0 for relu and identity
    assert bivariate_expectation(0.0, 1.0, 0.0, relu) == 0.0
    assert bivariate_expectation(1e-13, 1.0, 0.0, identity) == 0.0
    shifted = Activation.from_table([-1.0, 0.0, 1.0], [1.0, 1.0, 2.0])  # phi(0) = 1
    # E[1 * phi(V)] for V ~ N(0, 1): 1 + E[max(V, 0)] = 1 + 1/sqrt(2 pi)
    expect = 1 + 1 / math.sqrt(2 * math.pi)
    assert bivariate_expectation(0.0, 1.0, 0.0, shifted) == pytest.approx(expect, abs=1e-12)


def test_correlation_clamp_and_rejection(relu):
    # overshoot of 1e-9 relative is clamped
    assert bivariate_expectation(1, 1, 1 + 1e-9, relu) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(DomainError):
        bivariate_expectation(1, 1, 1.01, relu)
    with pytest.raises(DomainError):
        bivariate_expectation(-1, 1, 0, relu)


def test_vectorized_matches_scalar(tanh, rng):
    vu = rng.uniform(0.1, 3, 50)
    vv = rng.uniform(0.1, 3, 50)
    c = rng.uniform(-1, 1, 50) * np.sqrt(vu * vv)
    vec = bivariate_expectations(vu, vv, c, tanh)
    for i in range(50):
        assert vec[i] == bivariate_expectation(vu[i], vv[i], c[i], tanh)


def test_threads_do_not_change_results(tanh, rng):
    vu = rng.uniform(0.1, 3, 3000)
    c = rng.uniform(-1, 1, 3000) * vu
    a = bivariate_expectations(vu, vu, c, tanh, threads=1)
    b = bivariate_expectations(vu, vu, c, tanh, threads=4)
    assert a.tobytes() == b.tobytes()


# -- recursion -----------------------------------------------------------------

def test_base_kernel_is_scaled_gram():
    X = InputSet.from_points([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    p = NetworkParams(1, 1.7, 0.3)
    K = base_kernel(X, p)
    np.testing.assert_allclose(K.entries, 0.3 + 1.7 * X.X.T @ X.X, rtol=1e-15)
    assert K.layer == 1


def test_identity_fixed_point(identity, rng):
    X = InputSet(rng.normal(size=(4, 5)))
    ks = kernel_at_depth(X, identity, NetworkParams(10, 1.0, 0.0))
    for K in ks:
        assert np.max(np.abs(K.entries - ks[0].entries)) <= 1e-12 * np.max(np.abs(ks[0].entries))


def test_layer_step_uses_bivariate_expectation(relu):
    prev = CovMatrix([[1.0, 0.3], [0.3, 2.0]], layer=1)
    p = NetworkParams(2, 2.0, 0.1)
    nxt = layer_step(prev, relu, p)
    assert nxt.layer == 2
    assert nxt.entries[0, 1] == pytest.approx(0.1 + 2.0 * arccos_relu(1.0, 2.0, 0.3), abs=1e-13)
    assert nxt.entries[0, 0] == pytest.approx(0.1 + 2.0 * 0.5, abs=1e-13)


@st.composite
def input_sets(draw):
    I = draw(st.integers(1, 4))
    k = draw(st.integers(1, 6))
    X = draw(arrays(float, (I, k), elements=st.floats(-3, 3, allow_subnormal=False)))
    cols = {tuple(c) for c in X.T}
    if len(cols) < k:
        X = X + np.arange(k)[None, :] * 1e-3
    return InputSet(X)


@given(input_sets(), st.sampled_from(["relu", "tanh", "erf", "identity"]),
       st.floats(0.1, 3.0), st.floats(0.0, 1.0))
def test_kernel_symmetric_psd_and_diagonal_floor(X, kind, sw, sb):
    p = NetworkParams(3, sw, sb)
    for K in kernel_at_depth(X, Activation.builtin(kind), p):
        m = K.entries
        assert np.array_equal(m, m.T)
        scale = max(K.max_diag, 1e-300)
        assert np.linalg.eigvalsh(m)[0] >= -1e-10 * scale
        assert np.all(np.diag(m) >= sb - 1e-12)


@given(input_sets(), st.data())
def test_projective_consistency(X, data):
    if X.k < 2:
        return
    relu = Activation.builtin("relu")
    p = NetworkParams(3, 2.0, 0.1)
    full = kernel_at_depth(X, relu, p)[-1].entries
    drop = data.draw(st.integers(0, X.k - 1))
    keep = [i for i in range(X.k) if i != drop]
    sub = kernel_at_depth(X.subset(keep), relu, p)[-1].entries
    assert np.max(np.abs(full[np.ix_(keep, keep)] - sub)) <= 1e-12 * np.max(np.abs(full))


def test_dense_grid_stays_psd_before_repair(relu, tanh):
    x = np.linspace(-1, 1, 129)
    X = InputSet(np.stack([x, np.full_like(x, 0.3)]))
    for act in (relu, tanh):
        for K in kernel_at_depth(X, act, NetworkParams(3, 2.0, 0.1)):
            assert np.linalg.eigvalsh(K.entries)[0] >= -1e-8 * K.max_diag


# -- psd repair -------------------------------------------------------------------

def test_psd_repair_examples():
    m, clip = psd_repair(np.eye(2), 0.0)
    assert np.array_equal(m, np.eye(2)) and clip == 0.0
    ones = np.ones((2, 2))
    m, clip = psd_repair(ones, 0.0)
    assert np.array_equal(m, ones) and clip == 0.0
    bad = np.array([[1.0, 1 + 1e-10], [1 + 1e-10, 1.0]])
    m, clip = psd_repair(bad, 0.0)
    lam = np.linalg.eigvalsh(bad)
    assert clip == pytest.approx(-lam[0], rel=1e-3)
    assert np.linalg.eigvalsh(m)[0] >= -1e-15
    assert m[0, 1] < bad[0, 1]


def test_psd_repair_floor_and_errors():
    m, clip = psd_repair(np.array([[2.0, 1.9], [1.9, 2.0]]), 0.1)
    assert np.linalg.eigvalsh(m)[0] == pytest.approx(0.2, rel=1e-12)
    assert clip == pytest.approx(0.1, rel=1e-9)
    with pytest.raises(DomainError):
        psd_repair(np.array([[1.0, 0.5], [0.2, 1.0]]))


@given(arrays(float, (4, 4), elements=st.floats(-5, 5)), st.floats(0, 0.5))
def test_psd_repair_property(a, floor):
    m = (a + a.T) / 2
    fixed, clip = psd_repair(m, floor)
    f = floor * np.max(np.diag(m))
    assert np.array_equal(fixed, fixed.T)
    assert np.linalg.eigvalsh(fixed)[0] >= f - 1e-9 * max(1.0, np.max(np.abs(m)))
    assert clip >= 0


# -- moment constants -------------------------------------------------------------

def test_abs_normal_moment():
    assert [abs_normal_moment(t) for t in range(5)] == [1, 1, 3, 15, 105]
    z = np.random.default_rng(0).standard_normal(2 * 10**6)
    assert np.mean(z**4) == pytest.approx(3, rel=0.01)


def test_holder_moment_bound_examples():
    assert holder_moment_bound(1, 1, NetworkParams(1, 1.0, 0.1), 1.0) == 1.0
    assert holder_moment_bound(2, 2, NetworkParams(2, 1.0, 0.1), 2.0) == 144.0
    assert holder_moment_bound(1, 3, NetworkParams(3, 2.0, 0.1), 1.0) == 8.0
    with pytest.raises(RangeError):
        holder_moment_bound(4, 400, NetworkParams(3, 2.0, 0.1), 2.0)
    with pytest.raises(DomainError):
        holder_moment_bound(0, 1, NetworkParams(1, 1.0, 0.1), 1.0)


# -- types and I/O -------------------------------------------------------------------

def test_input_set_validation():
    with pytest.raises(DomainError):
        InputSet([[1.0, 1.0], [2.0, 2.0]])  # duplicate columns
    with pytest.raises(DomainError):
        InputSet([[1.0, np.nan]])
    with pytest.raises(DomainError):
        NetworkParams(0, 1.0, 0.1)
    with pytest.raises(DomainError):
        NetworkParams(2, 0.0, 0.1)
    with pytest.raises(DomainError):
        NetworkParams(2, 1.0, -0.1)
    with pytest.raises(DomainError):
        CovMatrix([[1.0, 0.5], [0.4, 1.0]])


def test_kernel_csv_round_trip(tmp_path, tanh, rng):
    X = InputSet(rng.normal(size=(3, 4)))
    K = kernel_at_depth(X, tanh, NetworkParams(2, 1.5, 0.2))[-1]
    p = write_kernel_csv(K, tmp_path / "k.csv")
    assert p.read_text().splitlines()[0] == "k,layer"
    back = read_kernel_csv(p)
    assert back.layer == 2
    assert np.array_equal(back.entries, K.entries)
