import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import ref_metrics, softmax
from polyroute.config_space import ConfigurationSpace
from polyroute.selector.select import (
    argmax_index,
    sample_index,
    select_offline,
    select_online,
    selector_metrics,
    softmax_probs,
    topk_indices,
)


def test_argmax_ties_go_to_lowest_index():
    assert argmax_index(np.array([0.2, 0.9, 0.9, 0.1])) == 1
    np.testing.assert_array_equal(topk_indices(np.array([0.5, 0.5, 0.7, 0.5]), 3), [2, 0, 1])


def test_masked_cells_never_selected():
    y = np.array([[0.9, 0.1], [0.8, 0.2]])
    mask = np.array([[False, True], [True, True]])
    assert argmax_index(y, mask) == 2
    assert 0 not in topk_indices(y, 4, mask)
    assert len(topk_indices(y, 10, mask)) == 3
    p = softmax_probs(y, 1.0, mask)
    assert p.ravel()[0] == 0.0
    rng = np.random.default_rng(0)
    assert all(sample_index(y, 5.0, rng, mask) != 0 for _ in range(200))
    with pytest.raises(ValueError):
        argmax_index(y, np.zeros_like(mask))


@given(arrays(float, st.integers(1, 30), elements=st.floats(0, 1)), st.floats(0.05, 10))
def test_softmax_is_a_distribution(y, temperature):
    p = softmax_probs(y, temperature)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p, softmax(list(y / temperature)), atol=1e-12)


def test_low_temperature_concentrates_on_argmax():
    y = np.array([0.3, 0.6, 0.55, 0.1])
    rng = np.random.default_rng(1)
    picks = [sample_index(y, 0.01, rng) for _ in range(500)]
    assert picks.count(1) >= 495
    with pytest.raises(ValueError):
        softmax_probs(y, 0.0)


def test_equal_scores_sample_uniformly():
    rng = np.random.default_rng(2)
    n, draws = 10, 5000
    counts = np.bincount([sample_index(np.full(n, 0.4), 1.0, rng) for _ in range(draws)], minlength=n)
    chi2 = ((counts - draws / n) ** 2 / (draws / n)).sum()
    # 0.1% critical value of chi-square with 9 degrees of freedom
    assert chi2 < 27.88


def test_select_returns_configurations():
    space = ConfigurationSpace()
    y = np.zeros(space.shape)
    y[1, 2, 3] = 1.0
    assert select_offline(y, space) == space.multi_index(np.ravel_multi_index((1, 2, 3), space.shape))
    assert select_online(y, 0.001, np.random.default_rng(0), space) == select_offline(y, space)


grid = st.integers(2, 8)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), grid, st.data())
def test_metrics_match_enumeration(n, c, data):
    vals = st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])
    pred = np.array(data.draw(st.lists(st.lists(vals, min_size=c, max_size=c), min_size=n, max_size=n)))
    truth = np.array(data.draw(st.lists(st.lists(vals, min_size=c, max_size=c), min_size=n, max_size=n)))
    app = np.array(data.draw(st.lists(st.lists(st.booleans(), min_size=c, max_size=c), min_size=n, max_size=n)))
    app[:, 0] = True
    got = selector_metrics(pred, truth, app, k=5)
    want = ref_metrics(pred.tolist(), truth.tolist(), app.tolist(), k=5)
    for key in want:
        assert got[key] == pytest.approx(want[key], abs=1e-12), key
    # ordering laws
    assert got["acc@top1"] <= got["acc@top5"]
    assert got["f1@top1"] <= got["f1@top5"] <= got["max_f1"]
    assert got["random_f1"] <= got["max_f1"]
    assert got["best_single_f1"] <= got["max_f1"]


def test_perfect_predictor_reaches_max():
    rng = np.random.default_rng(3)
    truth = rng.uniform(size=(20, 3, 4, 5))
    m = selector_metrics(truth, truth)
    assert m["acc@top1"] == 1.0
    assert m["f1@top1"] == pytest.approx(m["max_f1"])
    assert all(isinstance(v, float) for v in m.values())
