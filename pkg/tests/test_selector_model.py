import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import grad_check
from polyroute.errors import ArchitectureError
from polyroute.selector.model import (
    HeadParams,
    build_input,
    head_backward,
    head_forward,
    init_head,
    mse_dense,
    mse_sparse,
    predict,
    predict_backward,
    selection_mask,
)


def random_head(e=4, rank=3, channels=(6, 5), seed=0):
    rng = np.random.default_rng(seed)
    p = init_head(e, rank, channels, rng=rng)
    # move the adapter off identity so its gradient is exercised
    p.adapter_w += rng.normal(0, 0.1, size=p.adapter_w.shape)
    p.adapter_b += rng.normal(0, 0.1, size=p.adapter_b.shape)
    return p


@pytest.mark.parametrize("grid", [(4,), (3, 2), (2, 2, 2), (2, 1, 2, 3)])
def test_output_shape_follows_grid(grid):
    e = 3
    p = init_head(e, len(grid), channels=(4,))
    y = predict(p, np.ones((5, e)), np.ones((e,) + grid))
    assert y.shape == (5,) + grid
    assert np.all((y > 0) & (y < 1))


def test_zero_weights_predict_half():
    p = init_head(2, 3, channels=(4,))
    for layer in p.layers:
        layer.kernel[...] = 0
    y = predict(p, np.random.default_rng(0).normal(size=(3, 2)), np.ones((2, 3, 4, 5)))
    np.testing.assert_array_equal(y, 0.5)


def test_build_input_layout():
    t = np.array([1.0, 2.0])
    c = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
    x = build_input(t, c)
    assert x.shape == (4, 3, 2)
    np.testing.assert_array_equal(x[0], 1.0)
    np.testing.assert_array_equal(x[1], 2.0)
    np.testing.assert_array_equal(x[2:], c)
    assert build_input(np.stack([t, t]), c).shape == (2, 4, 3, 2)
    with pytest.raises(ArchitectureError):
        build_input(np.ones(3), c)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_fast_path_equals_assembled_input(seed):
    rng = np.random.default_rng(seed)
    p = random_head(seed=seed)
    task, conf = rng.normal(size=(3, 4)), rng.normal(size=(4, 2, 3, 2))
    t = task @ p.adapter_w.T + p.adapter_b
    c = np.einsum("ij,j...->i...", p.adapter_w, conf) + p.adapter_b[:, None, None, None]
    np.testing.assert_allclose(predict(p, task, conf), head_forward(p, build_input(t, c)), atol=1e-12)


def test_gradient_check_dense_loss():
    rng = np.random.default_rng(3)
    p = random_head()
    task, conf = rng.normal(size=(3, 4)), rng.normal(size=(4, 2, 2, 2))
    target = rng.uniform(size=(3, 2, 2, 2))

    def loss():
        return mse_dense(predict(p, task, conf), target)[0]

    y, cache = predict(p, task, conf, keep=True)
    grads = predict_backward(p, cache, mse_dense(y, target)[1])
    assert set(grads) == set(p.arrays())
    assert grad_check(p, loss, grads) < 1e-4


@pytest.mark.slow
def test_gradient_check_every_parameter_default_head():
    rng = np.random.default_rng(0)
    p = init_head(4, 3, rng=rng)
    p.adapter_w += rng.normal(0, 0.1, size=(4, 4))
    p.adapter_b += rng.normal(0, 0.1, size=4)
    task, conf = rng.normal(size=(3, 4)), rng.normal(size=(4, 2, 2, 2))
    target = rng.uniform(size=(3, 2, 2, 2))

    def loss():
        return mse_dense(predict(p, task, conf), target)[0]

    y, cache = predict(p, task, conf, keep=True)
    grads = predict_backward(p, cache, mse_dense(y, target)[1])
    assert grad_check(p, loss, grads) < 1e-4


def test_head_backward_matches_predict_backward():
    rng = np.random.default_rng(4)
    p = init_head(3, 2, channels=(5,), rng=rng, adapter=False)
    task, conf = rng.normal(size=(2, 3)), rng.normal(size=(3, 3, 2))
    y, cache = predict(p, task, conf, keep=True)
    dy = rng.normal(size=y.shape)
    g1 = predict_backward(p, cache, dy)
    _, tape = head_forward(p, build_input(task, conf), keep=True)
    g2, _ = head_backward(p, tape, dy)
    for k in g2:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


def test_sparse_loss_gradient_only_on_selected_cells():
    rng = np.random.default_rng(5)
    y_hat = rng.uniform(size=(4, 3, 4, 5))
    picks = [7, 0, 59, 33]
    masks = np.stack([selection_mask((3, 4, 5), k) for k in picks])
    loss, grad = mse_sparse(y_hat, masks, np.array([0.2, 0.9, 0.0, 1.0]))
    flat = grad.reshape(4, -1)
    for i, k in enumerate(picks):
        others = np.delete(flat[i], k)
        assert np.all(others == 0.0)
    expected = np.mean([(y_hat.reshape(4, -1)[i, k] - t) ** 2 for i, (k, t) in enumerate(zip(picks, [0.2, 0.9, 0, 1]))])
    assert loss == pytest.approx(expected)


def test_mse_dense_respects_mask():
    y_hat, y = np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]])
    loss, grad = mse_dense(y_hat, y, np.array([[True, False]]))
    assert loss == pytest.approx(0.25)
    assert grad[0, 1] == 0.0


def test_architecture_validation():
    with pytest.raises(ArchitectureError):
        init_head(4, 3, kernel=2)
    p = init_head(4, 3, channels=(2,))
    with pytest.raises(ArchitectureError):
        predict(p, np.ones((1, 5)), np.ones((4, 2, 2, 2)))
    with pytest.raises(ArchitectureError):
        predict(p, np.ones((1, 4)), np.ones((4, 2, 2)))


def test_copy_and_manifest_round_trip():
    p = random_head()
    q = HeadParams.from_arrays(p.manifest(), p.arrays())
    for k, v in p.arrays().items():
        np.testing.assert_array_equal(q.arrays()[k], v)
    c = p.copy()
    c.layers[0].kernel[...] = 0
    assert p.layers[0].kernel.any()


def test_default_architecture():
    p = init_head(8)
    assert [l.kernel.shape[:2] for l in p.layers] == [(64, 16), (16, 64), (1, 16)]
    assert [l.activation for l in p.layers] == ["relu", "relu", "sigmoid"]
    assert all(l.kernel.shape[2:] == (3, 3, 3) for l in p.layers)
    np.testing.assert_array_equal(p.adapter_w, np.eye(8))
