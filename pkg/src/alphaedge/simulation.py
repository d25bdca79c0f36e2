"""Lockstep network simulation.

All edges consume their streams tick by tick in lockstep. Aggregation
rounds fall on shared boundaries; at a boundary every participating edge
first publishes its freshly trained model, then fetches its neighbors'
snapshots (the staleness knob retargets the fetch to ``t - async_rounds *
E``), aggregates, and finally replaces its same-tick snapshot with the
post-aggregation model, which is what later (stale) fetches observe. An
availability schedule can silence edges for whole aggregation-period
intervals: a down edge neither serves, publishes, nor fetches snapshots,
though it keeps training on its own stream.

The result is bit-reproducible for a fixed config and stream collection,
including under multi-threaded batch processing.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .aggregation import AggregationWeights, ModelSnapshot, normalize, retarget_weights
from .edge import (
    EdgeState,
    PredictionRecord,
    make_edge,
    on_batch,
    rule_aggregate,
    run_aggregation,
)
from .errors import ConfigError, ContractViolationError, DataError
from .metrics import METRICS
from .peers import Topology, init_topology, selection_round
from .seeding import substream
from .streams import StreamBatch, flip_labels
from .model import LOSS_KINDS

STRATEGIES = ("alphaedge", "noagg", "fedweight", "uniweight", "randps", "nops")

# Strategies whose mixing weights are learned by gradient descent (and which
# therefore divert the boundary batch from training).
LEARNED_STRATEGIES = ("alphaedge", "randps", "nops")


@dataclass(frozen=True)
class SimConfig:
    """Full description of one simulation run."""

    n: int
    model: mdl.ModelSpec
    K: int = 5
    K_prime: int = 1
    m: int = 1
    E: int = 20
    B: int = 32
    alpha_steps: int = 10
    alpha_accumulate_batches: int = 1
    delay_batches: int = 0
    async_rounds: int = 0
    drop_fraction: float = 0.0
    adversarial_fraction: float = 0.0
    strategy: str = "alphaedge"
    loss: str = "mean-squared-error"
    metric: str = "one-minus-smape"
    seed: int = 0
    total_batches: int | None = None

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.K < 0 or self.K_prime < 0:
            raise ConfigError("K and K_prime must be non-negative")
        if self.m < 1:
            raise ConfigError(f"selection period m must be >= 1, got {self.m}")
        if self.E < 1:
            raise ConfigError(f"aggregation period E must be >= 1, got {self.E}")
        if self.B < 1:
            raise ConfigError(f"batch size B must be >= 1, got {self.B}")
        if self.alpha_steps < 0:
            raise ConfigError(f"alpha_steps must be >= 0, got {self.alpha_steps}")
        if self.alpha_accumulate_batches < 1:
            raise ConfigError(
                f"alpha_accumulate_batches must be >= 1, got {self.alpha_accumulate_batches}"
            )
        if self.alpha_accumulate_batches >= self.E:
            raise ConfigError(
                "alpha_accumulate_batches must be smaller than E (accumulated "
                "batches pause model training, and a full period of paused "
                f"training would never update the model): got "
                f"{self.alpha_accumulate_batches} with E={self.E}"
            )
        if self.delay_batches < 0 or self.async_rounds < 0:
            raise ConfigError("delay_batches and async_rounds must be non-negative")
        if not 0.0 <= self.drop_fraction <= 1.0:
            raise ConfigError(f"drop_fraction must be in [0, 1], got {self.drop_fraction}")
        if not 0.0 <= self.adversarial_fraction <= 1.0:
            raise ConfigError(
                f"adversarial_fraction must be in [0, 1], got {self.adversarial_fraction}"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.total_batches is not None and self.total_batches < 1:
            raise ConfigError(f"total_batches must be >= 1, got {self.total_batches}")

    def task(self) -> str:
        return "binary" if self.model.output == "binary-probability" else "regression"


@dataclass(frozen=True)
class AvailabilitySchedule:
    """Down intervals per edge; an interval spans ``period`` ticks."""

    period: int
    down: tuple[frozenset[int], ...]

    def available(self, edge_id: int, tick: int) -> bool:
        return (tick // self.period) not in self.down[edge_id]


def build_schedule(
    n: int, total_ticks: int, E: int, drop_fraction: float, rng: np.random.Generator
) -> AvailabilitySchedule:
    """Mark each (edge, interval) down independently with ``drop_fraction``."""
    intervals = max(1, math.ceil(total_ticks / E))
    down = []
    for _ in range(n):
        mask = rng.random(intervals) < drop_fraction
        down.append(frozenset(int(k) for k in np.nonzero(mask)[0]))
    return AvailabilitySchedule(period=E, down=tuple(down))


class SnapshotStore:
    """Published model snapshots, queryable as-of any past tick."""

    def __init__(self, n: int) -> None:
        self._ticks: list[list[int]] = [[] for _ in range(n)]
        self._snaps: list[list[ModelSnapshot]] = [[] for _ in range(n)]

    def publish(self, edge_id: int, params: np.ndarray, tick: int) -> None:
        ticks = self._ticks[edge_id]
        if ticks and tick <= ticks[-1]:
            raise ContractViolationError(
                f"edge {edge_id} republishing at tick {tick} (last {ticks[-1]})"
            )
        ticks.append(tick)
        self._snaps[edge_id].append(ModelSnapshot(edge_id, params.copy(), tick))

    def republish(self, edge_id: int, params: np.ndarray, tick: int) -> None:
        """Replace the snapshot already published at ``tick``."""
        ticks = self._ticks[edge_id]
        if not ticks or ticks[-1] != tick:
            raise ContractViolationError(
                f"edge {edge_id} has no tick-{tick} snapshot to replace"
            )
        self._snaps[edge_id][-1] = ModelSnapshot(edge_id, params.copy(), tick)

    def latest_at_or_before(self, edge_id: int, tick: int) -> ModelSnapshot | None:
        idx = bisect_right(self._ticks[edge_id], tick)
        return self._snaps[edge_id][idx - 1] if idx else None


def fetch_models(
    store: SnapshotStore,
    schedule: AvailabilitySchedule,
    neighbor_ids: tuple[int, ...],
    tick: int,
    async_rounds: int,
    E: int,
) -> dict[int, ModelSnapshot]:
    """Retrieve neighbor snapshots as of ``tick - async_rounds * E``.

    Neighbors that are down this tick, that have published nothing at or
    before the staleness target, or whose best snapshot lags the target by
    more than one full period (they missed several publications while down)
    are simply absent from the result.
    """
    target = tick - async_rounds * E
    out: dict[int, ModelSnapshot] = {}
    for j in neighbor_ids:
        if not schedule.available(j, tick):
            continue
        snap = store.latest_at_or_before(j, target)
        if snap is not None and snap.produced_at >= target - E:
            out[j] = snap
    return out


@dataclass(frozen=True)
class StrategyContext:
    """What a fixed-rule strategy may look at when assigning weights."""

    edge_id: int
    present: tuple[int, ...]
    self_examples: int
    neighbor_examples: dict[int, int]


def apply_strategy_weights(strategy: str, ctx: StrategyContext) -> AggregationWeights:
    """Mixing weights for the fixed-rule baselines."""
    if strategy == "uniweight":
        weights = AggregationWeights(1.0, {j: 1.0 for j in ctx.present})
    elif strategy == "fedweight":
        weights = AggregationWeights(
            float(ctx.self_examples),
            {j: float(ctx.neighbor_examples[j]) for j in ctx.present},
        )
        if weights.total() < 1.0:  # nobody has data yet: fall back to local
            weights.self_weight = 1.0
    else:
        raise ContractViolationError(f"{strategy!r} does not use fixed-rule weights")
    return weights


@dataclass
class SimulationResult:
    """Everything a run produces, before any file serialization."""

    config: SimConfig
    records: list[PredictionRecord]
    weight_trace: list[dict]
    topology_trace: list[dict]
    adversarial_edges: list[int]
    schedule: AvailabilitySchedule
    edge_states: list[EdgeState]
    final_topology: Topology | None
    aggregation_rounds: int
    messages_fetched: int


def _check_streams(config: SimConfig, streams: dict[int, list[StreamBatch]]) -> int:
    if set(streams) != set(range(config.n)):
        raise ConfigError(
            f"streams cover edges {sorted(streams)}, config expects 0..{config.n - 1}"
        )
    counts = {len(b) for b in streams.values()}
    if len(counts) != 1:
        raise DataError(f"streams are not lockstep: batch counts {sorted(counts)}")
    available = counts.pop()
    ticks = available if config.total_batches is None else config.total_batches
    if ticks > available:
        raise ConfigError(f"total_batches={ticks} but streams hold only {available}")
    for i in range(config.n):
        first = streams[i][0]
        if first.features.shape[1] != config.model.input_dim:
            raise ConfigError(
                f"edge {i} features have dim {first.features.shape[1]}, "
                f"model expects {config.model.input_dim}"
            )
    return ticks


def _retarget_edge(state: EdgeState, new_row: tuple[int, ...]) -> None:
    """Align stored weights and weight-optimizer accumulators to a new row."""
    state.agg_weights = retarget_weights(state.agg_weights, set(new_row))
    keep = set(new_row) | {state.edge_id}
    for moments in (state.alpha_moment1, state.alpha_moment2):
        for k in [k for k in moments if k not in keep]:
            del moments[k]


def _full_rows(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(j for j in range(n) if j != i) for i in range(n))


def run_simulation(
    config: SimConfig, streams: dict[int, list[StreamBatch]], workers: int = 1
) -> SimulationResult:
    """Drive every edge through its stream under the configured strategy."""
    config.validate()
    ticks = _check_streams(config, streams)
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    # Named sub-streams: consuming one never shifts the others.
    schedule = build_schedule(
        config.n, ticks, config.E, config.drop_fraction, substream(config.seed, "schedule")
    )
    adversarial: list[int] = []
    if config.adversarial_fraction > 0 and config.n > 0:
        count = math.ceil(config.adversarial_fraction * config.n)
        picked = substream(config.seed, "adversary").choice(
            config.n, size=min(count, config.n), replace=False
        )
        adversarial = sorted(int(i) for i in picked)
        streams = flip_labels(streams, config.task(), set(adversarial))

    # Each edge draws its own starting point (no server to hand out a shared
    # one); all draws come from the single "init" sub-stream in edge order.
    init_rng = substream(config.seed, "init")
    theta0 = [mdl.init_params(config.model, init_rng) for _ in range(config.n)]
    strategy = config.strategy
    aggregating = strategy != "noagg" and config.n > 1

    topology: Topology | None = None
    if aggregating:
        if strategy == "nops":
            topology = Topology(
                config.n, config.n - 1, _full_rows(config.n), version=0
            )
        else:
            topology = init_topology(config.n, config.K, substream(config.seed, "topology"))
    strategy_rng = substream(config.seed, "strategy")

    edges = [
        make_edge(
            i,
            config.model,
            config.loss,
            theta0[i],
            initial_neighbors=topology.row(i) if topology else (),
            agg_every=config.E if aggregating else None,
            reserve_alpha=strategy in LEARNED_STRATEGIES,
            alpha_accumulate=config.alpha_accumulate_batches,
        )
        for i in range(config.n)
    ]

    store = SnapshotStore(config.n)
    for i in range(config.n):
        store.publish(i, theta0[i], -1)  # initial models predate every tick

    records: list[PredictionRecord] = []
    weight_trace: list[dict] = []
    topology_trace: list[dict] = []
    agg_rounds = 0
    messages = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(ticks):
            if pool is None:
                tick_records = [
                    on_batch(edges[i], streams[i][t], config.delay_batches)
                    for i in range(config.n)
                ]
            else:
                futures = [
                    pool.submit(on_batch, edges[i], streams[i][t], config.delay_batches)
                    for i in range(config.n)
                ]
                tick_records = [f.result() for f in futures]
            records.extend(tick_records)

            due = [i for i in range(config.n) if edges[i].boundary_crossed]
            if not due or not aggregating:
                continue

            if strategy == "randps":
                rows = list(topology.neighbors)
                for i in due:
                    others = np.array([j for j in range(config.n) if j != i])
                    picked = strategy_rng.choice(
                        others, size=min(config.K, config.n - 1), replace=False
                    )
                    rows[i] = tuple(sorted(int(j) for j in picked))
                    _retarget_edge(edges[i], rows[i])
                topology = Topology(
                    config.n, config.K, tuple(rows), version=topology.version + 1
                )

            # Every participating edge advertises its freshly trained model
            # before anyone fetches, so an undelayed fetch sees current peers.
            for i in due:
                if schedule.available(i, t):
                    store.publish(i, edges[i].params, t)

            fetched: dict[int, dict[int, ModelSnapshot]] = {}
            for i in due:
                if schedule.available(i, t):
                    fetched[i] = fetch_models(
                        store, schedule, topology.row(i), t, config.async_rounds, config.E
                    )
                else:
                    fetched[i] = {}  # a down edge reaches nobody
                messages += len(fetched[i])

            for i in due:
                params = {j: s.params for j, s in fetched[i].items()}
                if strategy in LEARNED_STRATEGIES:
                    run_aggregation(edges[i], params, steps=config.alpha_steps)
                else:
                    ctx = StrategyContext(
                        edge_id=i,
                        present=tuple(sorted(params)),
                        self_examples=edges[i].examples_seen,
                        neighbor_examples={j: edges[j].examples_seen for j in params},
                    )
                    rule_aggregate(edges[i], params, apply_strategy_weights(strategy, ctx))

            # What stays on record for this round (and what stale fetches in
            # later rounds see) is the post-aggregation model.
            for i in due:
                if schedule.available(i, t):
                    store.republish(i, edges[i].params, t)

            agg_rounds += 1
            weight_trace.append(
                {
                    "round": agg_rounds,
                    "tick": t,
                    "weights": {
                        str(i): _normalized_entry(edges[i].agg_weights)
                        for i in range(config.n)
                    },
                }
            )

            if strategy == "alphaedge":
                new_topology = selection_round(
                    topology,
                    {i: edges[i].agg_weights for i in range(config.n)},
                    agg_rounds,
                    config.m,
                    config.K_prime,
                )
                if new_topology is not topology:
                    for i in range(config.n):
                        if new_topology.row(i) != topology.row(i):
                            _retarget_edge(edges[i], new_topology.row(i))
                    topology = new_topology
            topology_trace.append(
                {
                    "round": agg_rounds,
                    "tick": t,
                    "version": topology.version,
                    "neighbors": [list(r) for r in topology.neighbors],
                }
            )
    finally:
        if pool is not None:
            pool.shutdown()

    return SimulationResult(
        config=config,
        records=records,
        weight_trace=weight_trace,
        topology_trace=topology_trace,
        adversarial_edges=adversarial,
        schedule=schedule,
        edge_states=edges,
        final_topology=topology,
        aggregation_rounds=agg_rounds,
        messages_fetched=messages,
    )


def _normalized_entry(weights: AggregationWeights) -> dict:
    norm = normalize(weights)
    return {
        "self": norm.self_weight,
        "neighbors": {str(j): w for j, w in sorted(norm.neighbor_weights.items())},
    }
