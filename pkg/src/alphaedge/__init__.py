"""Decentralized personalized online learning with learned aggregation.

Edges train local models with online gradient descent, periodically blend
in neighbor models through a weighted average whose weights are themselves
learned by gradient descent, and reselect peers by chaining those weights
over two hops.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .aggregation import (
    AggregationWeights,
    ModelSnapshot,
    aggregate,
    alpha_gradient,
    learn_weights,
    normalize,
    retarget_weights,
)
from .edge import EdgeState, PredictionRecord, aggregation_due, make_edge, on_batch, run_aggregation
from .errors import (
    AlphaEdgeError,
    ConfigError,
    ContractViolationError,
    DataError,
    DegenerateWeightsError,
    ShapeError,
)
from .harness import ExperimentConfig, ExperimentReport, load_config, run_experiment, run_sweep
from .metrics import MetricSeries, auc, one_minus_smape
from .model import ModelSpec, OptimizerState, forward, gradient, init_params, optimizer_step
from .peers import Topology, init_topology, selection_round, two_hop_scores, update_neighbors
from .simulation import (
    AvailabilitySchedule,
    SimConfig,
    SimulationResult,
    build_schedule,
    fetch_models,
    run_simulation,
)
from .streams import CsvSchema, StreamBatch, SynthSpec, flip_labels, generate_synthetic, load_csv

__all__ = [
    "AggregationWeights",
    "AlphaEdgeError",
    "AvailabilitySchedule",
    "ConfigError",
    "ContractViolationError",
    "CsvSchema",
    "DataError",
    "DegenerateWeightsError",
    "EdgeState",
    "ExperimentConfig",
    "ExperimentReport",
    "MetricSeries",
    "ModelSnapshot",
    "ModelSpec",
    "OptimizerState",
    "PredictionRecord",
    "ShapeError",
    "SimConfig",
    "SimulationResult",
    "StreamBatch",
    "SynthSpec",
    "Topology",
    "aggregate",
    "aggregation_due",
    "alpha_gradient",
    "auc",
    "build_schedule",
    "fetch_models",
    "flip_labels",
    "forward",
    "generate_synthetic",
    "gradient",
    "init_params",
    "init_topology",
    "learn_weights",
    "load_config",
    "load_csv",
    "make_edge",
    "normalize",
    "on_batch",
    "one_minus_smape",
    "optimizer_step",
    "retarget_weights",
    "run_aggregation",
    "run_experiment",
    "run_simulation",
    "run_sweep",
    "selection_round",
    "two_hop_scores",
    "update_neighbors",
]
