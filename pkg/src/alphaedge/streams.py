"""Data streams: synthetic clustered generators and CSV-backed replay.

A stream is a per-edge list of ``StreamBatch`` objects consumed in lockstep
by the simulation. Synthetic streams draw each edge's labels from one of a
few cluster-level ground-truth functions, so edges in the same cluster
benefit from aggregating with each other and edges in different clusters do
not — the structure peer selection is supposed to discover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, ShapeError
from .seeding import substream

TASKS = ("regression", "binary")
DRIFT_MODES = ("rotate-clusters", "new-functions")


@dataclass(frozen=True)
class StreamBatch:
    """One batch of examples for one edge at one lockstep tick."""

    edge_id: int
    step: int
    features: np.ndarray
    labels: np.ndarray | None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels is not None and self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.features.shape[0]} rows"
            )

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a clustered synthetic stream collection."""

    n_edges: int
    n_clusters: int
    input_dim: int
    task: str = "regression"
    cluster_assignment: tuple[int, ...] | None = None
    noise_std: float = 0.1
    drift_at: int | None = None
    drift_mode: str = "rotate-clusters"
    batches_per_edge: int = 100
    batch_size: int = 32
    label_noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_edges < 1:
            raise ConfigError(f"n_edges must be positive, got {self.n_edges}")
        if not 1 <= self.n_clusters <= self.n_edges:
            raise ConfigError(
                f"n_clusters must be in [1, n_edges], got {self.n_clusters}"
            )
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.cluster_assignment is not None:
            assignment = tuple(int(c) for c in self.cluster_assignment)
            object.__setattr__(self, "cluster_assignment", assignment)
            if len(assignment) != self.n_edges:
                raise ConfigError(
                    f"cluster_assignment has {len(assignment)} entries for "
                    f"{self.n_edges} edges"
                )
            if any(c < 0 or c >= self.n_clusters for c in assignment):
                raise ConfigError(f"cluster ids must be in [0, {self.n_clusters})")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be non-negative, got {self.noise_std}")
        if self.drift_at is not None and self.drift_at < 1:
            raise ConfigError(f"drift_at must be >= 1, got {self.drift_at}")
        if self.drift_mode not in DRIFT_MODES:
            raise ConfigError(f"unknown drift mode {self.drift_mode!r}")
        if self.batches_per_edge < 1 or self.batch_size < 1:
            raise ConfigError("batches_per_edge and batch_size must be positive")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError(f"label_noise must be in [0, 1], got {self.label_noise}")
        if self.label_noise > 0 and self.task != "binary":
            raise ConfigError("label_noise applies to the binary task only")

    def clusters(self) -> tuple[int, ...]:
        """Effective edge -> cluster assignment (contiguous blocks by default)."""
        if self.cluster_assignment is not None:
            return self.cluster_assignment
        return tuple(i * self.n_clusters // self.n_edges for i in range(self.n_edges))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


#: L2 norm of every ground-truth weight vector. Kept deliberately small so
#: that online models hover within optimizer noise of the truth: a stream is
#: then never fully "solved" by one edge alone and pooling models across
#: edges of the same cluster keeps paying off for the whole run.
TRUTH_SCALE = 0.2

#: Fraction of each cluster's truth vector that is shared across all
#: clusters. Clusters are related but distinct tasks: with partial overlap a
#: foreign model is mildly useful (so learned cross-cluster weights settle at
#: a small positive value and two-hop paths stay informative) while a
#: same-cluster model is far more useful. Fully disjoint tasks would drive
#: every cross-cluster weight to zero and starve peer discovery of signal.
TRUTH_OVERLAP = 0.5


def _cluster_truths(rng: np.random.Generator, n_clusters: int, dim: int) -> np.ndarray:
    """Draw one truth vector per cluster at norm ``TRUTH_SCALE``.

    Each truth mixes a common direction (weight ``TRUTH_OVERLAP``) with a
    cluster-private direction, giving pairwise cosines around
    ``TRUTH_OVERLAP`` between clusters.
    """
    shared = rng.normal(size=dim)
    shared /= np.linalg.norm(shared)
    private = rng.normal(size=(n_clusters, dim))
    private /= np.linalg.norm(private, axis=1, keepdims=True)
    mixed = (
        np.sqrt(TRUTH_OVERLAP) * shared[None, :]
        + np.sqrt(1.0 - TRUTH_OVERLAP) * private
    )
    norms = np.linalg.norm(mixed, axis=1, keepdims=True)
    return TRUTH_SCALE * mixed / np.maximum(norms, 1e-12)


def generate_synthetic(spec: SynthSpec) -> dict[int, list[StreamBatch]]:
    """Materialize the full stream for every edge.

    Ground-truth weight vectors are one draw per cluster (partially shared
    across clusters, see ``_cluster_truths``) at norm ``TRUTH_SCALE``; after
    ``drift_at`` batches the truth either rotates to the next cluster's
    vector or jumps to freshly drawn ones. Each edge consumes its own named
    sub-stream, so streams are stable under changes to other edges.
    """
    cluster_rng = substream(spec.seed, "clusters")
    truth = _cluster_truths(cluster_rng, spec.n_clusters, spec.input_dim)
    post_drift = truth
    if spec.drift_at is not None and spec.drift_mode == "new-functions":
        post_drift = _cluster_truths(
            cluster_rng, spec.n_clusters, spec.input_dim
        )

    assignment = spec.clusters()
    streams: dict[int, list[StreamBatch]] = {}
    for i in range(spec.n_edges):
        rng = substream(spec.seed, f"edge-{i}")
        # Separate stream for the noise knob: turning it on must not shift
        # the features or the underlying clean labels.
        noise_rng = substream(spec.seed, f"edge-{i}-label-noise")
        batches = []
        for t in range(spec.batches_per_edge):
            cluster = assignment[i]
            if spec.drift_at is not None and t >= spec.drift_at:
                if spec.drift_mode == "rotate-clusters":
                    cluster = (cluster + 1) % spec.n_clusters
                    w = truth[cluster]
                else:
                    w = post_drift[cluster]
            else:
                w = truth[cluster]
            x = rng.normal(size=(spec.batch_size, spec.input_dim))
            scores = x @ w
            if spec.task == "regression":
                y = scores + rng.normal(scale=spec.noise_std, size=spec.batch_size)
            else:
                y = (rng.random(spec.batch_size) < _sigmoid(scores)).astype(float)
                if spec.label_noise > 0:
                    flip = noise_rng.random(spec.batch_size) < spec.label_noise
                    y = np.where(flip, 1.0 - y, y)
            batches.append(StreamBatch(edge_id=i, step=t, features=x, labels=y))
        streams[i] = batches
    return streams


def label_range(streams: dict[int, list[StreamBatch]]) -> tuple[float, float]:
    """(min, max) label value over every labeled batch of every edge."""
    lo, hi = np.inf, -np.inf
    for batches in streams.values():
        for b in batches:
            if b.has_labels and b.labels.size:
                lo = min(lo, float(b.labels.min()))
                hi = max(hi, float(b.labels.max()))
    if not np.isfinite(lo):
        raise DataError("no labeled data to take a label range over")
    return lo, hi


def flip_labels(
    streams: dict[int, list[StreamBatch]],
    task: str,
    edge_ids: set[int] | frozenset[int],
    bounds: tuple[float, float] | None = None,
) -> dict[int, list[StreamBatch]]:
    """Adversarially flip the labels of the selected edges.

    Binary labels swap 0 and 1; regression labels reflect through the global
    label range, ``y -> y_min + y_max - y`` (``bounds`` defaults to the range
    of the input streams). Reapplying with the same bounds undoes the flip.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    unknown = set(edge_ids) - set(streams)
    if unknown:
        raise DataError(f"cannot flip labels of unknown edges {sorted(unknown)}")
    if task == "regression":
        lo, hi = bounds if bounds is not None else label_range(streams)

    out: dict[int, list[StreamBatch]] = {}
    for i, batches in streams.items():
        if i not in edge_ids:
            out[i] = batches
            continue
        flipped = []
        for b in batches:
            if not b.has_labels:
                flipped.append(b)
                continue
            if task == "binary":
                bad = ~np.isin(b.labels, (0.0, 1.0))
                if bad.any():
                    raise DataError(
                        f"edge {i} step {b.step}: non-binary label "
                        f"{b.labels[bad][0]!r} cannot be flipped"
                    )
                y = 1.0 - b.labels
            else:
                y = (lo + hi) - b.labels
            flipped.append(StreamBatch(b.edge_id, b.step, b.features, y))
        out[i] = flipped
    return out


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for a long-format stream CSV."""

    edge_col: str = "edge_id"
    time_col: str = "t"
    label_col: str = "label"
    feature_cols: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_cols", tuple(self.feature_cols))
        if not self.feature_cols:
            raise ConfigError("at least one feature column is required")
        roles = (self.edge_col, self.time_col, self.label_col, *self.feature_cols)
        if len(set(roles)) != len(roles):
            raise ConfigError(f"overlapping column roles in {roles}")


def load_csv(
    path: str, schema: CsvSchema, batch_size: int
) -> tuple[dict[int, list[StreamBatch]], list]:
    """Read a long-format CSV into lockstep streams.

    Rows are grouped by the edge column and ordered by the time column with a
    stable sort (input order breaks ties), then chunked into batches of
    ``batch_size`` — a final short batch is kept. Every edge is truncated to
    the shortest edge's batch count so the collection stays lockstep.

    Returns the streams keyed by dense edge index plus the original edge
    keys, sorted; index ``i`` in the streams corresponds to key ``i`` of that
    list.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"stream file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from None

    needed = (schema.edge_col, schema.time_col, schema.label_col, *schema.feature_cols)
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing columns {missing}")
    for col in (schema.time_col, schema.label_col, *schema.feature_cols):
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.index[values.isna()]
        if len(bad):
            raise DataError(
                f"{path}: non-numeric or missing value in column {col!r} "
                f"at row {int(bad[0])}"
            )
        frame[col] = values.astype(float)

    try:
        edge_keys = sorted(frame[schema.edge_col].unique().tolist())
    except TypeError:
        raise DataError(
            f"{path}: column {schema.edge_col!r} mixes incomparable edge keys"
        ) from None
    if not edge_keys:
        raise DataError(f"{path} contains no rows")

    per_edge: dict[int, list[StreamBatch]] = {}
    for idx, key in enumerate(edge_keys):
        rows = frame[frame[schema.edge_col] == key]
        rows = rows.sort_values(schema.time_col, kind="stable")
        x = rows[list(schema.feature_cols)].to_numpy(dtype=float)
        y = rows[schema.label_col].to_numpy(dtype=float)
        batches = []
        for t, start in enumerate(range(0, len(rows), batch_size)):
            stop = start + batch_size
            batches.append(
                StreamBatch(edge_id=idx, step=t, features=x[start:stop], labels=y[start:stop])
            )
        per_edge[idx] = batches

    shortest = min(len(b) for b in per_edge.values())
    return {i: b[:shortest] for i, b in per_edge.items()}, edge_keys


def write_csv(
    streams: dict[int, list[StreamBatch]], path: str, schema: CsvSchema | None = None
) -> CsvSchema:
    """Flatten streams into the long CSV format ``load_csv`` reads back.

    The time column is a per-edge running example index, so reloading with
    the original batch size reproduces the batch boundaries.
    """
    dim = next(iter(streams.values()))[0].features.shape[1]
    if schema is None:
        schema = CsvSchema(feature_cols=tuple(f"x{d}" for d in range(dim)))
    if len(schema.feature_cols) != dim:
        raise ConfigError(
            f"schema names {len(schema.feature_cols)} feature columns, data has {dim}"
        )
    frames = []
    for i in sorted(streams):
        t = 0
        for b in streams[i]:
            if not b.has_labels:
                raise DataError(f"edge {i} step {b.step}: unlabeled batches cannot be written")
            chunk = pd.DataFrame(b.features, columns=list(schema.feature_cols))
            chunk.insert(0, schema.edge_col, i)
            chunk.insert(1, schema.time_col, range(t, t + b.size))
            chunk[schema.label_col] = b.labels
            frames.append(chunk)
            t += b.size
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    return schema
