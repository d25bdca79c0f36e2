from __future__ import annotations

import numpy as np
import pytest

from alphaedge.errors import ConfigError, ShapeError
from alphaedge.model import (
    EPS_P,
    ModelSpec,
    evaluate_loss,
    forward,
    gradient,
    init_params,
    make_optimizer,
    optimizer_step,
    param_count,
    prediction_loss,
)

from conftest import finite_difference, mixed_relative_error


def test_param_counts():
    assert param_count(ModelSpec("linear-regressor", input_dim=3)) == 4
    assert param_count(ModelSpec("logistic-classifier", input_dim=7)) == 8
    # 3->5->3->1: (3*5+5) + (5*3+3) + (3*1+1) = 42
    assert param_count(ModelSpec("mlp", 3, (5, 3), output="scalar-regression")) == 42


def test_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec("perceptron", input_dim=3)
    with pytest.raises(ConfigError):
        ModelSpec("linear-regressor", input_dim=0)
    with pytest.raises(ConfigError):
        ModelSpec("mlp", 3, (), output="scalar-regression")  # no hidden layers
    with pytest.raises(ConfigError):
        ModelSpec("linear-regressor", 3, hidden_layers=(4,))
    with pytest.raises(ConfigError):
        ModelSpec("mlp", 3, (4,))  # output head must be explicit
    with pytest.raises(ConfigError):
        ModelSpec("mlp", 3, (4,), activation="swish", output="scalar-regression")
    with pytest.raises(ConfigError):
        ModelSpec("linear-regressor", 3, output="binary-probability")


def test_output_head_inference():
    assert ModelSpec("linear-regressor", 2).output == "scalar-regression"
    assert ModelSpec("logistic-classifier", 2).output == "binary-probability"


def test_init_params_xavier_bounds(rng):
    spec = ModelSpec("mlp", 6, (4,), output="scalar-regression")
    params = init_params(spec, rng)
    w1 = params[:24]
    b1 = params[24:28]
    w2 = params[28:32]
    b2 = params[32:]
    assert np.all(np.abs(w1) <= np.sqrt(6.0 / (6 + 4)))
    assert np.all(np.abs(w2) <= np.sqrt(6.0 / (4 + 1)))
    assert np.all(b1 == 0.0) and np.all(b2 == 0.0)
    # same generator seed, same draw
    again = init_params(spec, np.random.default_rng(12345))
    assert np.array_equal(params, again)


def test_forward_linear_by_hand():
    spec = ModelSpec("linear-regressor", 2)
    params = np.array([2.0, -1.0, 0.5])  # w = (2, -1), b = 0.5
    x = np.array([[1.0, 1.0], [0.0, 3.0]])
    assert np.allclose(forward(spec, params, x), [1.5, -2.5])


def test_forward_logistic_midpoint():
    spec = ModelSpec("logistic-classifier", 2)
    params = np.zeros(3)
    preds = forward(spec, params, np.array([[5.0, -3.0]]))
    assert preds[0] == 0.5


def test_forward_mlp_relu_by_hand():
    # 1 -> 2 -> 1, relu. w1=[[1, -1]], b1=[0, 0], w2=[[1], [1]], b2=[0.25]
    spec = ModelSpec("mlp", 1, (2,), activation="relu", output="scalar-regression")
    params = np.array([1.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.25])
    # x=2: hidden = relu([2, -2]) = [2, 0] -> out = 2.25
    # x=-3: hidden = relu([-3, 3]) = [0, 3] -> out = 3.25
    assert np.allclose(forward(spec, params, np.array([[2.0], [-3.0]])), [2.25, 3.25])


def test_forward_shape_checks():
    spec = ModelSpec("linear-regressor", 2)
    with pytest.raises(ShapeError):
        forward(spec, np.zeros(5), np.zeros((1, 2)))
    with pytest.raises(ShapeError):
        forward(spec, np.zeros(3), np.zeros((1, 4)))


def test_mse_by_hand():
    preds = np.array([1.0, 3.0])
    labels = np.array([0.0, 1.0])
    assert prediction_loss(preds, labels, "mean-squared-error") == pytest.approx(2.5)


def test_bce_by_hand():
    preds = np.array([0.5, 0.5])
    labels = np.array([0.0, 1.0])
    assert prediction_loss(preds, labels, "binary-cross-entropy") == pytest.approx(np.log(2.0))


def test_bce_clamp_keeps_loss_finite():
    # A confident wrong prediction is clamped, not infinite.
    loss = prediction_loss(np.array([0.0]), np.array([1.0]), "binary-cross-entropy")
    assert loss == pytest.approx(-np.log(EPS_P))
    assert np.isfinite(loss)


def test_gradient_matches_finite_differences(rng):
    cases = [
        (ModelSpec("linear-regressor", 3), "mean-squared-error"),
        (ModelSpec("logistic-classifier", 3), "binary-cross-entropy"),
        (ModelSpec("mlp", 3, (5, 3), "relu", "scalar-regression"), "mean-squared-error"),
        (ModelSpec("mlp", 3, (4,), "tanh", "binary-probability"), "binary-cross-entropy"),
        (ModelSpec("mlp", 3, (4,), "relu", "binary-probability"), "mean-squared-error"),
    ]
    for spec, loss in cases:
        for _ in range(5):
            params = init_params(spec, rng) + rng.normal(scale=0.2, size=param_count(spec))
            x = rng.normal(size=(8, 3))
            if spec.output == "binary-probability" or loss == "binary-cross-entropy":
                y = (rng.random(8) < 0.5).astype(float)
            else:
                y = rng.normal(size=8)
            analytic = gradient(spec, params, x, y, loss)
            fd = finite_difference(lambda p: evaluate_loss(spec, p, x, y, loss), params)
            assert mixed_relative_error(analytic, fd) < 1e-6, (spec.kind, loss)


def test_gradient_zero_under_saturated_clamp():
    # sigmoid(1000) rounds to 1.0; the clamp pins it and kills the gradient.
    spec = ModelSpec("logistic-classifier", 1)
    params = np.array([1000.0, 0.0])
    g = gradient(spec, params, np.array([[1.0]]), np.array([0.0]), "binary-cross-entropy")
    assert np.all(g == 0.0)


def test_linear_mse_gradient_closed_form(rng):
    # For y = Xw + b the gradient has the textbook form (2/n) X^T r, (2/n) sum r.
    spec = ModelSpec("linear-regressor", 4)
    for _ in range(10):
        params = rng.normal(size=5)
        x = rng.normal(size=(12, 4))
        y = rng.normal(size=12)
        r = x @ params[:4] + params[4] - y
        expected = np.concatenate([2.0 / 12 * (x.T @ r), [2.0 / 12 * r.sum()]])
        got = gradient(spec, params, x, y, "mean-squared-error")
        assert np.allclose(got, expected, atol=1e-12)


def test_sgd_step_by_hand():
    opt = make_optimizer("sgd", 2, learning_rate=0.1)
    params, opt2 = optimizer_step(opt, np.array([1.0, -1.0]), np.array([2.0, 4.0]))
    assert np.allclose(params, [0.8, -1.4])
    assert opt2.step_count == 1 and opt.step_count == 0


def test_adam_first_step_by_hand():
    # With g=2: m_hat=2, v_hat=4, update = lr * 2 / (2 + eps).
    opt = make_optimizer("adam", 1)
    params, opt2 = optimizer_step(opt, np.array([0.5]), np.array([2.0]))
    expected = 0.5 - 0.001 * 2.0 / (2.0 + 1e-8)
    assert params[0] == pytest.approx(expected, abs=1e-15)
    assert opt2.step_count == 1


def test_adam_matches_reference_loop(rng):
    # Independent textbook implementation, 20 steps on random gradients.
    dim = 5
    opt = make_optimizer("adam", dim, learning_rate=0.01)
    params = rng.normal(size=dim)
    ref_params = params.copy()
    m = np.zeros(dim)
    v = np.zeros(dim)
    for t in range(1, 21):
        g = rng.normal(size=dim)
        params, opt = optimizer_step(opt, params, g)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref_params = ref_params - 0.01 * (m / (1 - 0.9**t)) / (
            np.sqrt(v / (1 - 0.999**t)) + 1e-8
        )
    assert np.allclose(params, ref_params, atol=1e-14)
    assert opt.step_count == 20


def test_optimizer_step_is_pure():
    opt = make_optimizer("adam", 2)
    params = np.array([1.0, 2.0])
    grad = np.array([0.5, -0.5])
    frozen = params.copy()
    m_before = opt.first_moment.copy()
    optimizer_step(opt, params, grad)
    assert np.array_equal(params, frozen)
    assert np.array_equal(opt.first_moment, m_before)
    assert opt.step_count == 0


def test_optimizer_step_rejects_bad_gradients():
    opt = make_optimizer("adam", 2)
    with pytest.raises(ValueError):
        optimizer_step(opt, np.zeros(2), np.array([np.nan, 0.0]))
    with pytest.raises(ShapeError):
        optimizer_step(opt, np.zeros(2), np.zeros(3))


def test_optimizer_validation():
    with pytest.raises(ConfigError):
        make_optimizer("rmsprop", 2)
    with pytest.raises(ConfigError):
        make_optimizer("adam", 2, learning_rate=0.0)
