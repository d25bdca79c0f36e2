"""Model aggregation with gradient-learned weights.

An edge combines its own parameters with neighbor snapshots through a
weighted average; the weights themselves are learned by descending the batch
loss of the aggregated model, treating the models as constants. The
gradient of the loss with respect to weight ``a_s`` has the closed form

    dL/da_s = g . (M_s - theta) / S

where ``theta`` is the current aggregate, ``g`` the parameter gradient of
the loss at ``theta``, and ``S`` the weight sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .errors import DegenerateWeightsError, ShapeError

# Below this total mass the weighted average is considered degenerate.
WEIGHT_SUM_FLOOR = 1e-8


@dataclass
class AggregationWeights:
    """Unnormalized, non-negative mixing weights: own model plus neighbors."""

    self_weight: float = 1.0
    neighbor_weights: dict[int, float] = field(default_factory=dict)

    def total(self) -> float:
        return self.self_weight + sum(self.neighbor_weights.values())

    def copy(self) -> AggregationWeights:
        return AggregationWeights(self.self_weight, dict(self.neighbor_weights))


@dataclass(frozen=True)
class ModelSnapshot:
    """A neighbor's parameters as published at some simulation step."""

    source_edge: int
    params: np.ndarray
    produced_at: int


def aggregate(
    local: np.ndarray,
    weights: AggregationWeights,
    neighbor_params: dict[int, np.ndarray],
) -> np.ndarray:
    """Weighted average of the local model and the given neighbor models.

    ``weights.neighbor_weights`` and ``neighbor_params`` must cover the same
    edge ids. With no neighbors the local parameters come back bit-identical.
    """
    if set(weights.neighbor_weights) != set(neighbor_params):
        raise ShapeError(
            f"weight keys {sorted(weights.neighbor_weights)} != "
            f"model keys {sorted(neighbor_params)}"
        )
    total = weights.total()
    if total < WEIGHT_SUM_FLOOR:
        raise DegenerateWeightsError(f"weight sum {total} below {WEIGHT_SUM_FLOOR}")
    if not neighbor_params:
        return local.copy()
    acc = weights.self_weight * local
    for j in sorted(neighbor_params):
        p = neighbor_params[j]
        if p.shape != local.shape:
            raise ShapeError(f"neighbor {j} params shape {p.shape} != local {local.shape}")
        acc = acc + weights.neighbor_weights[j] * p
    return acc / total


def alpha_gradient(
    spec: mdl.ModelSpec,
    loss_kind: str,
    local: np.ndarray,
    weights: AggregationWeights,
    neighbor_params: dict[int, np.ndarray],
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[float, dict[int, float]]:
    """Gradient of the batch loss of the aggregate w.r.t. each raw weight."""
    theta = aggregate(local, weights, neighbor_params)
    g = mdl.gradient(spec, theta, features, labels, loss_kind)
    total = weights.total()
    g_dot_theta = float(g @ theta)
    self_grad = (float(g @ local) - g_dot_theta) / total
    nbr_grads = {
        j: (float(g @ neighbor_params[j]) - g_dot_theta) / total
        for j in sorted(neighbor_params)
    }
    return self_grad, nbr_grads


def learn_weights(
    spec: mdl.ModelSpec,
    loss_kind: str,
    local: np.ndarray,
    neighbor_params: dict[int, np.ndarray],
    warm_start: AggregationWeights,
    features: np.ndarray,
    labels: np.ndarray,
    steps: int = 10,
    optimizer: mdl.OptimizerState | None = None,
) -> tuple[AggregationWeights, mdl.OptimizerState, np.ndarray]:
    """Descend the batch loss in weight space; models stay frozen.

    Starts from ``warm_start`` (weights for absent ids are ignored, missing
    ids start at zero), takes ``steps`` optimizer steps with projection onto
    the non-negative orthant, and returns the best iterate seen — start
    included — together with the advanced optimizer state and the aggregate
    parameters at the returned weights.
    """
    order = sorted(neighbor_params)
    alpha = np.empty(len(order) + 1)
    alpha[0] = warm_start.self_weight
    for i, j in enumerate(order, start=1):
        alpha[i] = warm_start.neighbor_weights.get(j, 0.0)
    alpha = np.maximum(alpha, 0.0)
    if alpha.sum() < WEIGHT_SUM_FLOOR:
        alpha[0] = 1.0  # degenerate start: fall back to the local model

    if optimizer is None:
        optimizer = mdl.make_optimizer("adam", len(alpha))
    elif optimizer.kind == "adam" and optimizer.first_moment.shape != alpha.shape:
        raise ShapeError(
            f"optimizer sized {optimizer.first_moment.shape} for {len(alpha)} weights"
        )

    def as_weights(vec: np.ndarray) -> AggregationWeights:
        return AggregationWeights(float(vec[0]), {j: float(vec[i]) for i, j in enumerate(order, 1)})

    best_alpha = alpha.copy()
    best_loss = mdl.evaluate_loss(
        spec, aggregate(local, as_weights(alpha), neighbor_params), features, labels, loss_kind
    )
    for _ in range(steps):
        w = as_weights(alpha)
        self_grad, nbr_grads = alpha_gradient(
            spec, loss_kind, local, w, neighbor_params, features, labels
        )
        grad_vec = np.array([self_grad, *(nbr_grads[j] for j in order)])
        alpha, optimizer = mdl.optimizer_step(optimizer, alpha, grad_vec)
        alpha = np.maximum(alpha, 0.0)
        if alpha.sum() < WEIGHT_SUM_FLOOR:
            alpha[0] = 1.0
        loss = mdl.evaluate_loss(
            spec, aggregate(local, as_weights(alpha), neighbor_params), features, labels, loss_kind
        )
        if loss < best_loss:
            best_loss = loss
            best_alpha = alpha.copy()

    best = as_weights(best_alpha)
    return best, optimizer, aggregate(local, best, neighbor_params)


def normalize(weights: AggregationWeights) -> AggregationWeights:
    """Scale weights to sum to one."""
    total = weights.total()
    if total < WEIGHT_SUM_FLOOR:
        raise DegenerateWeightsError(f"cannot normalize weight sum {total}")
    return AggregationWeights(
        weights.self_weight / total,
        {j: w / total for j, w in weights.neighbor_weights.items()},
    )


def retarget_weights(
    weights: AggregationWeights, new_neighbors: set[int] | frozenset[int]
) -> AggregationWeights:
    """Adjust stored weights to a changed neighbor set.

    Weights of departed neighbors are dropped, new neighbors start at zero,
    surviving neighbors and the self weight are untouched. If the surviving
    mass is degenerate the self weight resets to one.
    """
    kept = {j: weights.neighbor_weights.get(j, 0.0) for j in sorted(new_neighbors)}
    out = AggregationWeights(weights.self_weight, kept)
    if out.total() < WEIGHT_SUM_FLOOR:
        out.self_weight = 1.0
    return out
