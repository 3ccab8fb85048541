import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fried.classifier import ClassifierConfig, accuracy
from fried.data import Dataset, synth_bias_dataset
from fried.errors import DataError, UndefinedMetricError
from fried.fairness import (
    CSV_COLUMNS,
    TradeoffPoint,
    demographic_parity_difference,
    evaluate_representation,
    pareto_front,
    points_to_csv,
    sweep_tradeoff,
    train_downstream_classifier,
)
from fried.model import TrainConfig, train

QUICK = ClassifierConfig(hidden=(16, 8), epochs=30, learning_rate=0.01, batch_size=64)
TINY = TrainConfig(epochs=3, hidden=(6, 4), latent_dim=4)


def _pt(d, a, beta=0.0, lam=0.0):
    return TradeoffPoint(beta, lam, d, a)


def test_dp_examples():
    assert demographic_parity_difference([1, 1, 1, 1], [0, 0, 1, 1]) == 0.0
    assert demographic_parity_difference([1, 1, 0, 0], [0, 0, 1, 1]) == 1.0
    assert demographic_parity_difference([1, 0, 1, 1, 0, 0], [0, 0, 0, 1, 1, 1]) == pytest.approx(1 / 3)
    with pytest.raises(UndefinedMetricError):
        demographic_parity_difference([1, 0], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=40))
def test_dp_range_and_group_swap(pairs):
    yhat = np.array([a for a, _ in pairs])
    p = np.array([b for _, b in pairs])
    if p.min() == p.max():
        return
    d = demographic_parity_difference(yhat, p)
    assert 0.0 <= d <= 1.0
    assert d == demographic_parity_difference(yhat, 1 - p)
    assert demographic_parity_difference(np.zeros_like(yhat), p) == 0.0


def test_downstream_classifier_separable_blobs():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-2, 0.5, (200, 2)), rng.normal(2, 0.5, (200, 2))])
    y = np.repeat([0, 1], 200)
    clf = train_downstream_classifier(x, y, seed=0)
    assert accuracy(y, clf.predict(x)) > 0.95
    assert np.array_equal(clf.predict(x), train_downstream_classifier(x, y, seed=0).predict(x))


def test_downstream_classifier_without_signal():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1000, 2))
    y = (rng.random(1000) < 0.7).astype(int)
    clf = train_downstream_classifier(x[:700], y[:700], seed=1)
    assert abs(accuracy(y[700:], clf.predict(x[700:])) - 0.7) <= 0.05


def test_downstream_classifier_rejects_single_class():
    with pytest.raises(DataError):
        train_downstream_classifier(np.zeros((10, 2)), np.ones(10))


def test_label_equals_protected_gives_full_disparity():
    ds = synth_bias_dataset(1000, bias=1.0, label_noise=0.0, seed=0)
    model, _ = train(ds, TrainConfig(epochs=60, hidden=(16, 8), latent_dim=8, ablation="vanilla_ae"))
    pt = evaluate_representation(model, ds, folds=3, seed=0)
    assert pt.delta_dp > 0.9 and pt.accuracy > 0.9


def test_evaluate_is_deterministic():
    ds = synth_bias_dataset(300, seed=0)
    model, _ = train(ds, TINY)
    a = evaluate_representation(model, ds, folds=3, seed=4, cfg=QUICK)
    b = evaluate_representation(model, ds, folds=3, seed=4, cfg=QUICK)
    assert a == b
    assert len(a.folds) == 3


def test_sweep_order_and_degenerate_grid():
    ds = synth_bias_dataset(300, seed=1)
    pts = sweep_tradeoff(ds, [0.5, 0.0], [1.0, 0.0], TINY, folds=2, seed=0, cfg=QUICK)
    assert [(p.beta, p.lam) for p in pts] == [(0.5, 1.0), (0.5, 0.0), (0.0, 1.0), (0.0, 0.0)]
    again = sweep_tradeoff(ds, [0.5, 0.0], [1.0, 0.0], TINY, folds=2, seed=0, cfg=QUICK)
    assert points_to_csv(pts) == points_to_csv(again)
    one = sweep_tradeoff(ds, [0.5], [1.0], TINY, folds=2, seed=0, cfg=QUICK)
    assert one[0] == pts[0]


def test_sweep_records_failures_and_continues():
    ds = synth_bias_dataset(200, seed=2)
    bad = TrainConfig(epochs=30, learning_rate=1e6, hidden=(6, 4), latent_dim=4)
    pts = sweep_tradeoff(ds, [0.0], [0.0, 1.0], bad, folds=2, cfg=QUICK)
    assert len(pts) == 2 and all(p.failed for p in pts)
    assert pareto_front(pts) == []


def test_pareto_examples():
    pts = [_pt(0.1, 0.8), _pt(0.2, 0.9), _pt(0.15, 0.7)]
    front = pareto_front(pts)
    assert [(p.delta_dp, p.accuracy) for p in front] == [(0.1, 0.8), (0.2, 0.9)]
    assert pareto_front([pts[0]]) == [pts[0]]
    same = [_pt(0.3, 0.6, b) for b in range(3)]
    assert len(pareto_front(same)) == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_pareto_laws(raw):
    pts = [_pt(d, a) for d, a in raw]
    front = pareto_front(pts)
    assert pareto_front(front) == front
    assert [p.delta_dp for p in front] == sorted(p.delta_dp for p in front)
    for p in pts:
        if p in front:
            continue
        assert any(q.delta_dp <= p.delta_dp and q.accuracy >= p.accuracy for q in front)


def test_csv_columns():
    text = points_to_csv([_pt(0.1, 0.8, 0.25, 0.5)])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert float(rows[0]["lambda"]) == 0.5
