"""Model zoo for the edge nodes: flat-parameter linear / logistic / MLP models.

Parameters live in a single flat float64 vector so that aggregation is plain
vector arithmetic. The layout is layer by layer, weights before bias:
``[W_1 (C-order), b_1, W_2, b_2, ...]``. Every edge in a simulation shares
one ModelSpec, so parameter vectors are interchangeable across edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ShapeError

MODEL_KINDS = ("linear-regressor", "logistic-classifier", "mlp")
ACTIVATIONS = ("relu", "tanh")
OUTPUTS = ("scalar-regression", "binary-probability")
LOSS_KINDS = ("binary-cross-entropy", "mean-squared-error")
OPTIMIZER_KINDS = ("sgd", "adam")

# Probabilities are clamped to [EPS_P, 1 - EPS_P] before the log-loss.
EPS_P = 1e-7


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description shared by all edges of a simulation."""

    kind: str
    input_dim: int
    hidden_layers: tuple[int, ...] = ()
    activation: str = "relu"
    output: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if not isinstance(self.input_dim, int) or self.input_dim < 1:
            raise ConfigError(f"input_dim must be a positive int, got {self.input_dim!r}")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError(f"hidden layer sizes must be positive, got {self.hidden_layers}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

        if self.kind == "mlp":
            if not self.hidden_layers:
                raise ConfigError("mlp requires at least one hidden layer")
            if self.output is None:
                raise ConfigError("mlp requires an explicit output head")
        else:
            if self.hidden_layers:
                raise ConfigError(f"{self.kind} takes no hidden layers")
            inferred = "scalar-regression" if self.kind == "linear-regressor" else "binary-probability"
            if self.output is None:
                object.__setattr__(self, "output", inferred)
            elif self.output != inferred:
                raise ConfigError(f"{self.kind} implies output {inferred!r}, got {self.output!r}")
        if self.output not in OUTPUTS:
            raise ConfigError(f"unknown output head {self.output!r}")


@lru_cache(maxsize=None)
def layer_dims(spec: ModelSpec) -> tuple[tuple[int, int], ...]:
    """(fan_in, fan_out) per affine layer, input to output."""
    sizes = (spec.input_dim, *spec.hidden_layers, 1)
    return tuple(zip(sizes[:-1], sizes[1:]))


@lru_cache(maxsize=None)
def _layout(spec: ModelSpec) -> tuple[tuple[int, int, int], ...]:
    """(weight_offset, bias_offset, next_offset) per layer in the flat vector."""
    out = []
    offset = 0
    for fan_in, fan_out in layer_dims(spec):
        w_off = offset
        b_off = offset + fan_in * fan_out
        offset = b_off + fan_out
        out.append((w_off, b_off, offset))
    return tuple(out)


def param_count(spec: ModelSpec) -> int:
    return _layout(spec)[-1][2]


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Xavier-uniform weights, zero biases."""
    params = np.zeros(param_count(spec))
    for (fan_in, fan_out), (w_off, b_off, _) in zip(layer_dims(spec), _layout(spec)):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[w_off:b_off] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return params


def _check_params(spec: ModelSpec, params: np.ndarray) -> None:
    if params.shape != (param_count(spec),):
        raise ShapeError(
            f"expected {param_count(spec)} parameters for {spec.kind}, got shape {params.shape}"
        )


def _check_features(spec: ModelSpec, features: np.ndarray) -> None:
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ShapeError(
            f"expected features of shape (batch, {spec.input_dim}), got {features.shape}"
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split form avoids overflow in exp for large |z|.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return (z > 0).astype(float) if name == "relu" else 1.0 - a * a


def _forward_trace(
    spec: ModelSpec, params: np.ndarray, features: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Run the network, keeping pre-activations and activations for backprop.

    Returns (predictions, pre_activations per layer, layer inputs per layer).
    """
    dims = layer_dims(spec)
    layout = _layout(spec)
    inputs: list[np.ndarray] = []
    pre: list[np.ndarray] = []
    h = features
    for i, ((fan_in, fan_out), (w_off, b_off, end)) in enumerate(zip(dims, layout)):
        w = params[w_off:b_off].reshape(fan_in, fan_out)
        b = params[b_off:end]
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if i < len(dims) - 1:
            h = _activate(spec.activation, z)
        else:
            h = z
    out = h[:, 0]
    if spec.output == "binary-probability":
        out = _sigmoid(out)
    return out, pre, inputs


def forward(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Predictions for a feature batch: shape (batch,).

    Regression heads emit raw scores; probability heads emit sigmoid outputs.
    """
    _check_params(spec, params)
    _check_features(spec, features)
    preds, _, _ = _forward_trace(spec, params, features)
    return preds


def prediction_loss(predictions: np.ndarray, labels: np.ndarray, loss_kind: str) -> float:
    """Mean loss of predictions against labels."""
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {loss_kind!r}")
    if predictions.shape != labels.shape:
        raise ShapeError(
            f"predictions shape {predictions.shape} != labels shape {labels.shape}"
        )
    if loss_kind == "mean-squared-error":
        diff = predictions - labels
        return float(np.mean(diff * diff))
    p = np.clip(predictions, EPS_P, 1.0 - EPS_P)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)))


def evaluate_loss(
    spec: ModelSpec,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    loss_kind: str,
) -> float:
    return prediction_loss(forward(spec, params, features), labels, loss_kind)


def gradient(
    spec: ModelSpec,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    loss_kind: str,
) -> np.ndarray:
    """Flat gradient of the mean batch loss with respect to the parameters."""
    _check_params(spec, params)
    _check_features(spec, features)
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {loss_kind!r}")
    preds, pre, inputs = _forward_trace(spec, params, features)
    if preds.shape != labels.shape:
        raise ShapeError(f"labels shape {labels.shape} does not match batch {preds.shape}")
    n = features.shape[0]

    # dL/d(prediction), shape (batch,). Samples pinned by the probability
    # clamp contribute zero gradient.
    if loss_kind == "mean-squared-error":
        dpred = 2.0 * (preds - labels) / n
    else:
        p = np.clip(preds, EPS_P, 1.0 - EPS_P)
        active = (preds > EPS_P) & (preds < 1.0 - EPS_P)
        dpred = np.where(active, (p - labels) / (p * (1.0 - p)), 0.0) / n
    # dL/d(final pre-activation): fold in the sigmoid head if present.
    if spec.output == "binary-probability":
        dz = dpred * preds * (1.0 - preds)
    else:
        dz = dpred

    dims = layer_dims(spec)
    layout = _layout(spec)
    grad = np.zeros_like(params)
    delta = dz[:, None]  # (batch, fan_out of current layer)
    for i in range(len(dims) - 1, -1, -1):
        (fan_in, fan_out), (w_off, b_off, end) = dims[i], layout[i]
        grad[w_off:b_off] = (inputs[i].T @ delta).reshape(-1)
        grad[b_off:end] = delta.sum(axis=0)
        if i > 0:
            w = params[w_off:b_off].reshape(fan_in, fan_out)
            upstream = delta @ w.T
            delta = upstream * _activate_grad(spec.activation, pre[i - 1], _activate(spec.activation, pre[i - 1]))
    return grad


# --------------------------------------------------------------------------
# Optimizers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    """Immutable optimizer state; ``optimizer_step`` returns a new one."""

    kind: str
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: np.ndarray = field(default_factory=lambda: np.zeros(0))
    second_moment: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_count: int = 0

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")


def make_optimizer(kind: str, dim: int, learning_rate: float = 0.001) -> OptimizerState:
    return OptimizerState(
        kind=kind,
        learning_rate=learning_rate,
        first_moment=np.zeros(dim),
        second_moment=np.zeros(dim),
    )


def optimizer_step(
    state: OptimizerState, params: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, OptimizerState]:
    """One descent step; pure in both the parameters and the state."""
    if params.shape != grad.shape:
        raise ShapeError(f"gradient shape {grad.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    if state.kind == "sgd":
        return params - state.learning_rate * grad, replace(
            state, step_count=state.step_count + 1
        )
    if state.first_moment.shape != params.shape:
        raise ShapeError(
            f"optimizer moments sized {state.first_moment.shape} do not match params {params.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)
