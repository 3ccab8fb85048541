import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fried.classifier import ClassifierConfig
from fried.errors import ConfigurationError, DataError, InsufficientDataError
from fried.infotheory import (
    DiscreteDistribution,
    EstimatorConfig,
    SampleTriple,
    chernoff_information,
    cmi_estimate_difference,
    derangement,
    informativeness_from_codes,
    kl_discrete,
    kl_estimate_classifier,
    mi_estimate,
    separability_check,
)
from fried.numkit import make_rng

# a quicker estimator for property checks that do not need full accuracy
FAST = EstimatorConfig(ClassifierConfig(hidden=(32, 16), epochs=40, learning_rate=3e-3, batch_size=128,
                                        optimizer="adam"))


def _grid_chernoff(a, b, step=1e-5):
    u = np.arange(step, 1.0, step)
    mask = (a > 0) & (b > 0)
    la, lb = np.log(a[mask]), np.log(b[mask])
    vals = np.logaddexp.reduce((1 - u)[:, None] * la + u[:, None] * lb, axis=1)
    return -vals.min()


def _random_dist(rng, k):
    w = rng.random(k) + 1e-3
    return DiscreteDistribution(w / w.sum())


def test_distribution_validation():
    with pytest.raises(ConfigurationError):
        DiscreteDistribution(np.array([0.5, 0.6]))
    with pytest.raises(ConfigurationError):
        DiscreteDistribution(np.array([-0.1, 1.1]))


def test_chernoff_bernoulli_pair():
    res = chernoff_information(DiscreteDistribution.bernoulli(0.1), DiscreteDistribution.bernoulli(0.9))
    assert res.u_star == pytest.approx(0.5, abs=1e-6)
    assert res.value == pytest.approx(-math.log(2 * math.sqrt(0.09)), abs=1e-9)
    assert res.value == pytest.approx(0.5108, abs=1e-4)


def test_chernoff_identical_and_disjoint():
    p = DiscreteDistribution(np.array([0.2, 0.3, 0.5]))
    assert chernoff_information(p, p).value == 0.0
    res = chernoff_information(DiscreteDistribution(np.array([1.0, 0.0])), DiscreteDistribution(np.array([0.0, 1.0])))
    assert res.disjoint and math.isinf(res.value)


def test_chernoff_against_grid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        a, b = _random_dist(rng, k), _random_dist(rng, k)
        assert abs(chernoff_information(a, b).value - _grid_chernoff(a.probs, b.probs)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_chernoff_symmetric_and_below_kl(k, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_dist(rng, k), _random_dist(rng, k)
    c_ab = chernoff_information(a, b).value
    assert c_ab == pytest.approx(chernoff_information(b, a).value, abs=1e-9)
    assert 0 <= c_ab <= min(kl_discrete(a, b), kl_discrete(b, a)) + 1e-9


def test_kl_discrete_examples():
    half = DiscreteDistribution(np.array([0.5, 0.5]))
    assert kl_discrete(half, half) == 0.0
    q = DiscreteDistribution(np.array([0.25, 0.75]))
    assert kl_discrete(half, q) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-12)
    assert kl_discrete(DiscreteDistribution(np.array([1.0, 0.0])), half) == pytest.approx(math.log(2))
    with pytest.raises(DataError):
        kl_discrete(half, DiscreteDistribution(np.array([1.0, 0.0])))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10**6))
def test_kl_nonnegative_zero_iff_equal(k, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_dist(rng, k), _random_dist(rng, k)
    assert kl_discrete(a, b) > 0
    assert kl_discrete(a, a) == 0.0


def test_derangement_has_no_fixed_points():
    for n in (2, 3, 10, 101):
        for s in range(5):
            d = derangement(n, make_rng(s))
            assert sorted(d.tolist()) == list(range(n))
            assert np.all(d != np.arange(n))


def test_kl_estimate_same_distribution_near_zero():
    rng = np.random.default_rng(1)
    est = kl_estimate_classifier(rng.normal(size=(2000, 1)), rng.normal(size=(2000, 1)), seed=1)
    assert abs(est.value) < 0.05
    assert est.n_p == 2000 and est.reliable


def test_kl_estimate_gaussian_pair():
    rng = np.random.default_rng(2)
    est = kl_estimate_classifier(rng.normal(0, 1, (5000, 1)), rng.normal(1, 1, (5000, 1)), seed=2)
    assert est.value == pytest.approx(0.5, abs=0.1)


def test_kl_estimate_onehot_bernoulli():
    rng = np.random.default_rng(3)
    a = np.eye(2)[(rng.random(5000) < 0.5).astype(int)]
    b = np.eye(2)[(rng.random(5000) < 0.25).astype(int)]
    oracle = kl_discrete(DiscreteDistribution.bernoulli(0.5), DiscreteDistribution.bernoulli(0.25))
    assert kl_estimate_classifier(a, b, seed=3).value == pytest.approx(oracle, abs=0.05)


def test_kl_estimate_degenerate_and_small_inputs(caplog):
    same = np.ones((50, 2))
    assert kl_estimate_classifier(same, same).value == 0.0
    est = kl_estimate_classifier(np.random.default_rng(0).normal(size=(10, 1)),
                                 np.random.default_rng(1).normal(size=(10, 1)), FAST)
    assert not est.reliable
    assert "unreliable" in caplog.text
    with pytest.raises(InsufficientDataError):
        kl_estimate_classifier(np.zeros((1, 1)), np.zeros((5, 1)))


def test_kl_estimate_is_seed_deterministic():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(300, 2)), rng.normal(0.5, 1, size=(300, 2))
    assert kl_estimate_classifier(a, b, FAST, seed=9).value == kl_estimate_classifier(a, b, FAST, seed=9).value


def test_cmi_independent_triple():
    rng = np.random.default_rng(5)
    s = SampleTriple(rng.normal(size=(5000, 1)), rng.normal(size=(5000, 1)), rng.normal(size=(5000, 1)))
    assert abs(cmi_estimate_difference(s, seed=5).value) < 0.05


def test_cmi_gaussian_correlation():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(5000, 1))
    y = 0.8 * x + 0.6 * rng.normal(size=(5000, 1))
    s = SampleTriple(x, y, rng.normal(size=(5000, 1)))
    est = cmi_estimate_difference(s, seed=6)
    assert est.value == pytest.approx(-0.5 * math.log(1 - 0.64), abs=0.15)
    assert est.value == pytest.approx(est.i_x_yz - est.i_x_z)


def test_cmi_markov_chain():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(5000, 1))
    x = z + 0.5 * rng.normal(size=(5000, 1))
    y = z + 0.5 * rng.normal(size=(5000, 1))
    assert cmi_estimate_difference(SampleTriple(x, y, z), seed=7).value < 0.05


def test_cmi_requires_rows():
    s = SampleTriple(np.zeros((50, 1)), np.zeros((50, 1)), np.zeros((50, 1)))
    with pytest.raises(InsufficientDataError):
        cmi_estimate_difference(s)
    with pytest.raises(ConfigurationError):
        SampleTriple(np.zeros((3, 1)), np.zeros((4, 1)), np.zeros((3, 1)))


def test_mi_detects_dependence():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(1000, 1))
    assert mi_estimate(a, a + 0.1 * rng.normal(size=(1000, 1)), FAST).value > 0.5


def _sep_data(n=800, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    p = np.zeros(n)
    p[: n // 4] = 1
    x = rng.normal(size=(n, 2))
    return rng, x, y, p


def test_separability_copy_is_not_an_improvement():
    rng, x, y, p = _sep_data()
    res = separability_check(x, x.copy(), y, p, FAST, seed=0, n_permutations=5)
    assert not res.improves
    assert res.n_rows == int((p == 0).sum())


def test_separability_label_leak_is_an_improvement():
    rng, x, y, p = _sep_data(seed=1)
    leak = y[:, None] + 0.1 * rng.normal(size=(len(y), 1))
    res = separability_check(x, leak, y, p, FAST, seed=1, n_permutations=5)
    assert res.improves and res.cmi > 5 * res.tau


def test_separability_noise_is_not_an_improvement():
    rng, x, y, p = _sep_data(seed=2)
    res = separability_check(x, rng.normal(size=(len(y), 2)), y, p, FAST, seed=2, n_permutations=5)
    assert not res.improves
    assert res.tau >= 0.02


def test_separability_needs_unprotected_rows():
    rng, x, y, _ = _sep_data()
    with pytest.raises(InsufficientDataError):
        separability_check(x, x, y, np.ones(len(y)), FAST)


def test_informativeness_extremes():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(1000, 1))
    assert informativeness_from_codes(x, np.zeros((1000, 3)), FAST) < 0.05
    low = informativeness_from_codes(x, x + 1.0 * rng.normal(size=(1000, 1)), FAST)
    high = informativeness_from_codes(x, x + 0.05 * rng.normal(size=(1000, 1)), FAST)
    assert 0 <= low < high <= 1
    with pytest.raises(InsufficientDataError):
        informativeness_from_codes(x[:100], x[:100])


def test_estimator_config_roundtrip():
    cfg = EstimatorConfig.from_dict(FAST.to_dict())
    assert cfg == FAST and cfg.digest() == FAST.digest()
    with pytest.raises(ConfigurationError):
        EstimatorConfig.from_dict({"bogus": 1})


def test_kl_estimate_error_shrinks_with_n():
    errors = []
    for n in (500, 2000, 8000):
        runs = []
        for s in range(5):
            rng = np.random.default_rng(100 + s)
            est = kl_estimate_classifier(rng.normal(0, 1, (n, 1)), rng.normal(1, 1, (n, 1)), seed=s)
            runs.append(abs(est.value - 0.5))
        errors.append(float(np.median(runs)))
    assert errors[0] >= errors[1] >= errors[2]


def test_cmi_permutation_null_is_centered():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5000, 1))
    y = x + 0.5 * rng.normal(size=(5000, 1))
    z = rng.normal(size=(5000, 1))
    hits = 0
    for k in range(20):
        shuffled = x[make_rng(k).permutation(5000)]
        hits += abs(cmi_estimate_difference(SampleTriple(shuffled, y, z), seed=k).value) < 0.05
    assert hits >= 18
