"""A single edge node: online training loop plus aggregation hooks.

Each tick the edge predicts on the arriving batch with its current model
(test-then-train), queues the labeled batch behind the feedback delay, and
trains on whatever deliveries have come due. Every ``agg_every``-th trained
batch marks an aggregation boundary; strategies that learn their mixing
weights divert that boundary batch from training and spend it on weight
learning instead.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .aggregation import AggregationWeights, learn_weights, aggregate
from .errors import ContractViolationError
from .streams import StreamBatch


@dataclass(frozen=True)
class PredictionRecord:
    """Prequential output of one tick: predictions made before training."""

    edge_id: int
    step: int
    predictions: np.ndarray
    labels: np.ndarray | None
    is_aggregation_step: bool

    @property
    def batch_size(self) -> int:
        return int(self.predictions.shape[0])


@dataclass
class EdgeState:
    """Everything one edge carries between ticks."""

    edge_id: int
    spec: mdl.ModelSpec
    loss_kind: str
    params: np.ndarray
    model_optimizer: mdl.OptimizerState
    agg_weights: AggregationWeights
    # Weight-learning Adam accumulators, keyed by source edge id; the edge's
    # own id keys the self slot. Kept as dicts so they survive neighbor
    # turnover: departing sources drop out, new sources start at zero.
    alpha_moment1: dict[int, float] = field(default_factory=dict)
    alpha_moment2: dict[int, float] = field(default_factory=dict)
    alpha_step_count: int = 0
    alpha_learning_rate: float = 0.001
    agg_every: int | None = None
    reserve_alpha: bool = True
    feedback_queue: deque = field(default_factory=deque)  # (due_tick, batch)
    recent_delivered: deque = field(default_factory=lambda: deque(maxlen=1))
    pending_alpha: StreamBatch | None = None
    boundary_crossed: bool = False
    local_step: int = 0
    examples_seen: int = 0
    clock: int = -1


def make_edge(
    edge_id: int,
    spec: mdl.ModelSpec,
    loss_kind: str,
    params: np.ndarray,
    initial_neighbors: tuple[int, ...] = (),
    optimizer_kind: str = "adam",
    learning_rate: float = 0.001,
    agg_every: int | None = None,
    reserve_alpha: bool = True,
    alpha_accumulate: int = 1,
    alpha_learning_rate: float = 0.001,
) -> EdgeState:
    """Fresh edge: self weight one, every initial neighbor at weight zero.

    Starting neighbors at zero treats the initial random topology the same
    way peer selection treats newly added neighbors: a peer earns weight
    through its learned updates rather than receiving trust up front. (An
    all-ones start would make the first aggregations an unweighted average
    of mostly unrelated models, and unwinding a full unit of weight at the
    α learning rate takes most of a run.)
    """
    return EdgeState(
        edge_id=edge_id,
        spec=spec,
        loss_kind=loss_kind,
        params=params.copy(),
        model_optimizer=mdl.make_optimizer(optimizer_kind, params.size, learning_rate),
        agg_weights=AggregationWeights(1.0, {j: 0.0 for j in initial_neighbors}),
        agg_every=agg_every,
        reserve_alpha=reserve_alpha,
        recent_delivered=deque(maxlen=max(1, alpha_accumulate)),
        alpha_learning_rate=alpha_learning_rate,
    )


def on_batch(state: EdgeState, batch: StreamBatch, delay_batches: int = 0) -> PredictionRecord:
    """Advance one tick: predict, enqueue feedback, train on due deliveries."""
    if batch.edge_id != state.edge_id:
        raise ContractViolationError(
            f"edge {state.edge_id} received a batch for edge {batch.edge_id}"
        )
    if batch.step <= state.clock:
        raise ContractViolationError(
            f"edge {state.edge_id}: batch step {batch.step} is not after tick {state.clock}"
        )
    state.clock = batch.step
    state.boundary_crossed = False

    predictions = mdl.forward(state.spec, state.params, batch.features)

    if batch.has_labels:
        state.feedback_queue.append((batch.step + delay_batches, batch))
    while state.feedback_queue and state.feedback_queue[0][0] <= state.clock:
        _, delivered = state.feedback_queue.popleft()
        state.recent_delivered.append(delivered)
        next_step = state.local_step + 1
        at_boundary = state.agg_every is not None and next_step % state.agg_every == 0
        if at_boundary:
            state.boundary_crossed = True
        # Weight learning pauses model training for the last
        # len(recent_delivered) slots of each period, so the whole
        # accumulated weight-learning batch stays out-of-sample.
        reserved = (
            state.reserve_alpha
            and state.agg_every is not None
            and (
                at_boundary
                or next_step % state.agg_every
                > state.agg_every - state.recent_delivered.maxlen
            )
        )
        if at_boundary and state.reserve_alpha:
            state.pending_alpha = delivered
        if not reserved:
            grad = mdl.gradient(
                state.spec, state.params, delivered.features, delivered.labels, state.loss_kind
            )
            state.params, state.model_optimizer = mdl.optimizer_step(
                state.model_optimizer, state.params, grad
            )
        state.local_step = next_step
        state.examples_seen += delivered.size

    return PredictionRecord(
        edge_id=state.edge_id,
        step=batch.step,
        predictions=predictions,
        labels=batch.labels,
        is_aggregation_step=state.boundary_crossed,
    )


def aggregation_due(state: EdgeState, agg_every: int) -> bool:
    """True when the edge sits exactly on an aggregation boundary."""
    return state.local_step > 0 and state.local_step % agg_every == 0


def take_alpha_batch(state: EdgeState) -> tuple[np.ndarray, np.ndarray]:
    """The weight-learning batch: the most recent deliveries, newest last."""
    if state.pending_alpha is None:
        raise ContractViolationError(f"edge {state.edge_id} has no reserved batch")
    batches = list(state.recent_delivered)
    if len(batches) == 1:
        return batches[0].features, batches[0].labels
    return (
        np.concatenate([b.features for b in batches]),
        np.concatenate([b.labels for b in batches]),
    )


def run_aggregation(
    state: EdgeState, neighbor_params: dict[int, np.ndarray], steps: int = 10
) -> None:
    """Learn mixing weights on the reserved batch, then adopt the aggregate.

    Only the sources present in ``neighbor_params`` take part; stored
    weights (and optimizer accumulators) of absent neighbors are retained
    untouched, so a neighbor coming back after an outage resumes from its
    last learned weight.
    """
    features, labels = take_alpha_batch(state)
    present = sorted(neighbor_params)
    warm = AggregationWeights(
        state.agg_weights.self_weight,
        {j: state.agg_weights.neighbor_weights.get(j, 0.0) for j in present},
    )
    keys = [state.edge_id, *present]
    optimizer = mdl.OptimizerState(
        kind="adam",
        learning_rate=state.alpha_learning_rate,
        first_moment=np.array([state.alpha_moment1.get(k, 0.0) for k in keys]),
        second_moment=np.array([state.alpha_moment2.get(k, 0.0) for k in keys]),
        step_count=state.alpha_step_count,
    )
    learned, optimizer, new_params = learn_weights(
        state.spec,
        state.loss_kind,
        state.params,
        neighbor_params,
        warm,
        features,
        labels,
        steps=steps,
        optimizer=optimizer,
    )
    state.agg_weights.self_weight = learned.self_weight
    state.agg_weights.neighbor_weights.update(learned.neighbor_weights)
    for idx, k in enumerate(keys):
        state.alpha_moment1[k] = float(optimizer.first_moment[idx])
        state.alpha_moment2[k] = float(optimizer.second_moment[idx])
    state.alpha_step_count = optimizer.step_count
    state.params = new_params
    state.pending_alpha = None


def rule_aggregate(
    state: EdgeState, neighbor_params: dict[int, np.ndarray], weights: AggregationWeights
) -> None:
    """Aggregate with externally fixed weights (no learning, nothing reserved)."""
    state.params = aggregate(state.params, weights, neighbor_params)
    state.agg_weights.self_weight = weights.self_weight
    state.agg_weights.neighbor_weights.update(weights.neighbor_weights)
