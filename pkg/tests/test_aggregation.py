from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphaedge.aggregation import (
    WEIGHT_SUM_FLOOR,
    AggregationWeights,
    aggregate,
    alpha_gradient,
    learn_weights,
    normalize,
    retarget_weights,
)
from alphaedge.errors import DegenerateWeightsError, ShapeError
from alphaedge.model import ModelSpec, evaluate_loss, init_params, make_optimizer


def test_aggregate_by_hand():
    local = np.array([1.0, 0.0])
    nbr = np.array([0.0, 4.0])
    out = aggregate(local, AggregationWeights(1.0, {3: 3.0}), {3: nbr})
    assert np.allclose(out, [0.25, 3.0])


def test_aggregate_without_neighbors_is_bit_exact_copy():
    local = np.array([0.1, 0.2, 0.3])
    out = aggregate(local, AggregationWeights(0.7, {}), {})
    assert np.array_equal(out, local)
    assert out is not local


def test_aggregate_zero_weight_neighbors_leave_local_unchanged():
    local = np.array([0.1, -0.7, 1e-3])
    nbr = np.array([100.0, 100.0, 100.0])
    out = aggregate(local, AggregationWeights(2.0, {1: 0.0}), {1: nbr})
    assert np.array_equal(out, local)


def test_aggregate_validation():
    local = np.zeros(2)
    with pytest.raises(ShapeError):
        aggregate(local, AggregationWeights(1.0, {1: 1.0}), {2: np.zeros(2)})
    with pytest.raises(ShapeError):
        aggregate(local, AggregationWeights(1.0, {1: 1.0}), {1: np.zeros(3)})
    with pytest.raises(DegenerateWeightsError):
        aggregate(local, AggregationWeights(0.0, {1: 0.0}), {1: np.zeros(2)})


@given(
    weights=st.lists(st.floats(0.0, 10.0), min_size=1, max_size=4),
    self_weight=st.floats(0.01, 10.0),
    seed=st.integers(0, 2**16),
)
@settings(max_examples=60, deadline=None)
def test_aggregate_stays_in_coordinate_hull(weights, self_weight, seed):
    # A weighted average cannot leave the per-coordinate range of its inputs.
    rng = np.random.default_rng(seed)
    local = rng.normal(size=3)
    nbrs = {j: rng.normal(size=3) for j in range(len(weights))}
    w = AggregationWeights(self_weight, dict(enumerate(weights)))
    out = aggregate(local, w, nbrs)
    stacked = np.vstack([local, *nbrs.values()])
    assert np.all(out >= stacked.min(axis=0) - 1e-12)
    assert np.all(out <= stacked.max(axis=0) + 1e-12)


def test_alpha_gradient_hand_case_helpful_neighbor():
    # Linear model, x=0 so only the bias matters. Local bias 0, neighbor
    # bias 2, equal weights -> aggregate bias 1, target 2. Pulling more
    # neighbor weight helps: its gradient must be negative (and the self
    # gradient positive, same size).
    spec = ModelSpec("linear-regressor", 1)
    sg, ng = alpha_gradient(
        spec,
        "mean-squared-error",
        np.array([0.0, 0.0]),
        AggregationWeights(1.0, {7: 1.0}),
        {7: np.array([0.0, 2.0])},
        np.zeros((1, 1)),
        np.array([2.0]),
    )
    assert sg == pytest.approx(1.0)
    assert ng[7] == pytest.approx(-1.0)


def test_alpha_gradient_hand_case_harmful_neighbor():
    # Neighbor points the opposite way from the truth: its gradient is
    # positive, i.e. descent pushes its weight down.
    spec = ModelSpec("linear-regressor", 1)
    sg, ng = alpha_gradient(
        spec,
        "mean-squared-error",
        np.array([1.0, 0.0]),
        AggregationWeights(1.0, {3: 1.0}),
        {3: np.array([-1.0, 0.0])},
        np.array([[1.0], [2.0]]),
        np.array([1.0, 2.0]),
    )
    assert sg == pytest.approx(-2.5)
    assert ng[3] == pytest.approx(2.5)


def test_alpha_gradient_matches_finite_differences(rng):
    spec = ModelSpec("mlp", 3, (4,), output="scalar-regression")
    for _ in range(10):
        local = init_params(spec, rng)
        nbrs = {2: init_params(spec, rng), 5: init_params(spec, rng)}
        w = AggregationWeights(
            float(rng.uniform(0.1, 2.0)),
            {2: float(rng.uniform(0.0, 2.0)), 5: float(rng.uniform(0.0, 2.0))},
        )
        x = rng.normal(size=(6, 3))
        y = rng.normal(size=6)
        sg, ng = alpha_gradient(spec, "mean-squared-error", local, w, nbrs, x, y)

        def loss_at(s, a2, a5):
            ww = AggregationWeights(s, {2: a2, 5: a5})
            return evaluate_loss(spec, aggregate(local, ww, nbrs), x, y, "mean-squared-error")

        h = 1e-6
        s0, a2, a5 = w.self_weight, w.neighbor_weights[2], w.neighbor_weights[5]
        assert sg == pytest.approx((loss_at(s0 + h, a2, a5) - loss_at(s0 - h, a2, a5)) / (2 * h), abs=1e-6)
        assert ng[2] == pytest.approx((loss_at(s0, a2 + h, a5) - loss_at(s0, a2 - h, a5)) / (2 * h), abs=1e-6)
        assert ng[5] == pytest.approx((loss_at(s0, a2, a5 + h) - loss_at(s0, a2, a5 - h)) / (2 * h), abs=1e-6)


def test_alpha_gradient_scales_inversely_with_weight_mass(rng):
    # Scaling all weights by c leaves the aggregate unchanged, so the loss
    # surface flattens by exactly 1/c.
    spec = ModelSpec("linear-regressor", 2)
    local = rng.normal(size=3)
    nbrs = {1: rng.normal(size=3)}
    x = rng.normal(size=(4, 2))
    y = rng.normal(size=4)
    w1 = AggregationWeights(0.5, {1: 1.5})
    w3 = AggregationWeights(1.5, {1: 4.5})
    sg1, ng1 = alpha_gradient(spec, "mean-squared-error", local, w1, nbrs, x, y)
    sg3, ng3 = alpha_gradient(spec, "mean-squared-error", local, w3, nbrs, x, y)
    assert sg3 == pytest.approx(sg1 / 3.0)
    assert ng3[1] == pytest.approx(ng1[1] / 3.0)


def _quadratic_setup():
    """Local model is wrong, neighbor holds the truth exactly."""
    spec = ModelSpec("linear-regressor", 1)
    local = np.array([0.0, 0.0])
    truth = np.array([2.0, 1.0])
    rng = np.random.default_rng(0)
    x = rng.normal(size=(32, 1))
    y = x[:, 0] * truth[0] + truth[1]
    return spec, local, {1: truth}, x, y


def test_learn_weights_pulls_in_helpful_neighbor():
    spec, local, nbrs, x, y = _quadratic_setup()
    warm = AggregationWeights(1.0, {1: 0.0})
    learned, opt, params = learn_weights(
        spec, "mean-squared-error", local, nbrs, warm, x, y
    )
    start_loss = evaluate_loss(spec, aggregate(local, warm, nbrs), x, y, "mean-squared-error")
    end_loss = evaluate_loss(spec, params, x, y, "mean-squared-error")
    assert learned.neighbor_weights[1] > 0.0
    assert end_loss < start_loss
    assert opt.step_count == 10


def test_learn_weights_never_beats_brute_force_grid():
    # Long optimization against an exhaustive grid over the weight square.
    spec, local, nbrs, x, y = _quadratic_setup()
    warm = AggregationWeights(1.0, {1: 1.0})
    opt = make_optimizer("adam", 2, learning_rate=0.01)
    learned, _, params = learn_weights(
        spec, "mean-squared-error", local, nbrs, warm, x, y, steps=3000, optimizer=opt
    )
    end_loss = evaluate_loss(spec, params, x, y, "mean-squared-error")
    grid_best = np.inf
    for s in np.linspace(0.0, 3.0, 61):
        for a in np.linspace(0.0, 3.0, 61):
            w = AggregationWeights(float(s), {1: float(a)})
            if w.total() < WEIGHT_SUM_FLOOR:
                continue
            grid_best = min(
                grid_best,
                evaluate_loss(spec, aggregate(local, w, nbrs), x, y, "mean-squared-error"),
            )
    # The optimum is all mass on the neighbor (zero loss); the learner should
    # at least match the grid resolution and push the self weight near zero.
    assert end_loss <= grid_best + 1e-6
    assert learned.self_weight < 0.05 * learned.neighbor_weights[1]


def test_learn_weights_returns_best_iterate_not_last():
    # A huge learning rate overshoots; the best iterate along the way must
    # still be at least as good as both the start and the final iterate.
    spec, local, nbrs, x, y = _quadratic_setup()
    warm = AggregationWeights(1.0, {1: 1.0})
    opt = make_optimizer("adam", 2, learning_rate=5.0)
    learned, _, params = learn_weights(
        spec, "mean-squared-error", local, nbrs, warm, x, y, steps=7, optimizer=opt
    )
    best_loss = evaluate_loss(spec, params, x, y, "mean-squared-error")
    start_loss = evaluate_loss(spec, aggregate(local, warm, nbrs), x, y, "mean-squared-error")
    assert best_loss <= start_loss + 1e-15
    assert np.array_equal(params, aggregate(local, learned, nbrs))


def test_learn_weights_clamps_to_nonnegative(rng):
    spec = ModelSpec("linear-regressor", 2)
    for _ in range(20):
        local = rng.normal(size=3)
        nbrs = {j: rng.normal(size=3) for j in range(3)}
        warm = AggregationWeights(1.0, {j: float(rng.uniform(0, 0.2)) for j in range(3)})
        x = rng.normal(size=(8, 2))
        y = rng.normal(size=8)
        opt = make_optimizer("adam", 4, learning_rate=0.5)
        learned, _, _ = learn_weights(
            spec, "mean-squared-error", local, nbrs, warm, x, y, steps=25, optimizer=opt
        )
        assert learned.self_weight >= 0.0
        assert all(v >= 0.0 for v in learned.neighbor_weights.values())
        assert learned.total() >= WEIGHT_SUM_FLOOR


def test_learn_weights_with_no_neighbors_keeps_local_model():
    spec = ModelSpec("linear-regressor", 1)
    local = np.array([1.0, -1.0])
    warm = AggregationWeights(1.0, {})
    x = np.array([[1.0], [2.0]])
    y = np.array([0.0, 0.0])
    learned, opt, params = learn_weights(spec, "mean-squared-error", local, {}, warm, x, y)
    assert np.array_equal(params, local)
    assert learned.neighbor_weights == {}
    assert opt.step_count == 10


def test_learn_weights_degenerate_warm_start_falls_back_to_self():
    spec = ModelSpec("linear-regressor", 1)
    local = np.array([1.0, 0.0])
    nbrs = {2: np.array([3.0, 0.0])}
    warm = AggregationWeights(0.0, {2: 0.0})
    learned, _, _ = learn_weights(
        spec, "mean-squared-error", local, nbrs, warm,
        np.array([[1.0]]), np.array([1.0]), steps=0,
    )
    assert learned.self_weight == 1.0
    assert learned.neighbor_weights[2] == 0.0


def test_learn_weights_ignores_stale_warm_entries():
    # Warm start may mention edges that are not present this round.
    spec = ModelSpec("linear-regressor", 1)
    local = np.array([1.0, 0.0])
    warm = AggregationWeights(1.0, {2: 5.0, 9: 1.0})
    learned, _, _ = learn_weights(
        spec, "mean-squared-error", local, {9: np.array([2.0, 0.0])}, warm,
        np.array([[1.0]]), np.array([1.5]), steps=2,
    )
    assert set(learned.neighbor_weights) == {9}


def test_normalize_by_hand():
    norm = normalize(AggregationWeights(1.0, {4: 3.0}))
    assert norm.self_weight == pytest.approx(0.25)
    assert norm.neighbor_weights[4] == pytest.approx(0.75)
    with pytest.raises(DegenerateWeightsError):
        normalize(AggregationWeights(0.0, {4: 0.0}))


def test_retarget_weights():
    w = AggregationWeights(0.5, {1: 2.0, 2: 0.25})
    out = retarget_weights(w, {2, 7})
    assert out.self_weight == 0.5
    assert out.neighbor_weights == {2: 0.25, 7: 0.0}
    # dropping every massy neighbor from a near-zero self resets the self weight
    w2 = AggregationWeights(0.0, {1: 2.0})
    out2 = retarget_weights(w2, {7})
    assert out2.self_weight == 1.0
    assert out2.neighbor_weights == {7: 0.0}
