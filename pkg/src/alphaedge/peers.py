"""Directed neighbor topology and score-based peer reselection.

Each edge keeps ``min(K, n-1)`` outgoing neighbors. Periodically it scores
two-hop candidates — neighbors of neighbors — by chaining normalized
aggregation weights: a candidate ``k`` reachable through neighbors ``j``
scores ``sum_j a[i][j] * a[j][k]``. The lowest-weight current neighbors are
then swapped for the best-scoring candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AggregationWeights, normalize
from .errors import ConfigError, ContractViolationError

# Tolerance when asserting that supplied weights are normalized.
NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class Topology:
    """Directed neighbor lists for ``n`` edges; rows are sorted tuples."""

    n: int
    K: int
    neighbors: tuple[tuple[int, ...], ...]
    version: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"topology needs at least one edge, got n={self.n}")
        if self.K < 0:
            raise ConfigError(f"K must be non-negative, got {self.K}")
        if len(self.neighbors) != self.n:
            raise ConfigError(f"expected {self.n} rows, got {len(self.neighbors)}")
        want = min(self.K, self.n - 1)
        for i, row in enumerate(self.neighbors):
            if len(row) != want:
                raise ConfigError(f"edge {i} has {len(row)} neighbors, expected {want}")
            if len(set(row)) != len(row):
                raise ConfigError(f"edge {i} has duplicate neighbors: {row}")
            if i in row:
                raise ConfigError(f"edge {i} lists itself as a neighbor")
            if any(j < 0 or j >= self.n for j in row):
                raise ConfigError(f"edge {i} has out-of-range neighbors: {row}")
            if tuple(sorted(row)) != row:
                raise ConfigError(f"edge {i} row is not sorted: {row}")

    def row(self, edge_id: int) -> tuple[int, ...]:
        return self.neighbors[edge_id]


def init_topology(n: int, K: int, rng: np.random.Generator) -> Topology:
    """Random directed topology: each edge samples min(K, n-1) distinct peers."""
    if n < 2:
        raise ConfigError(f"need at least two edges for a topology, got n={n}")
    size = min(K, n - 1)
    rows = []
    for i in range(n):
        candidates = np.array([j for j in range(n) if j != i])
        picked = rng.choice(candidates, size=size, replace=False)
        rows.append(tuple(sorted(int(j) for j in picked)))
    return Topology(n=n, K=K, neighbors=tuple(rows), version=0)


@dataclass(frozen=True)
class CandidateScore:
    edge_id: int
    score: float


def _check_normalized(edge_id: int, row: tuple[int, ...], weights: dict[int, float]) -> None:
    expected = set(row) | {edge_id}
    if set(weights) != expected:
        raise ContractViolationError(
            f"edge {edge_id}: normalized weights cover {sorted(weights)}, "
            f"expected {sorted(expected)}"
        )
    total = sum(weights.values())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise ContractViolationError(f"edge {edge_id}: weights sum to {total}, not 1")


def two_hop_scores(
    topology: Topology,
    edge_id: int,
    normalized_weights: dict[int, dict[int, float]],
) -> list[CandidateScore]:
    """Score every two-hop candidate of ``edge_id``, best first.

    ``normalized_weights[i]`` maps ``{i} | neighbors(i)`` to weights summing
    to one. Candidates are nodes reachable through a neighbor that are not
    ``edge_id`` itself and not already neighbors; unreachable nodes do not
    appear. Ties break toward the smaller edge id.
    """
    row = topology.row(edge_id)
    own = normalized_weights.get(edge_id)
    if own is None:
        raise ContractViolationError(f"no weights supplied for edge {edge_id}")
    _check_normalized(edge_id, row, own)

    current = set(row)
    scores: dict[int, float] = {}
    for j in row:
        j_weights = normalized_weights.get(j)
        if j_weights is None:
            raise ContractViolationError(f"no weights supplied for neighbor {j}")
        _check_normalized(j, topology.row(j), j_weights)
        for k in topology.row(j):
            if k == edge_id or k in current:
                continue
            scores[k] = scores.get(k, 0.0) + own[j] * j_weights[k]
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [CandidateScore(edge_id=k, score=s) for k, s in ranked]


def _updated_row(
    edge_id: int,
    row: tuple[int, ...],
    neighbor_weights: dict[int, float],
    scores: list[CandidateScore],
    K_prime: int,
) -> tuple[int, ...]:
    """Swap the K' lowest-weight neighbors for the best positive candidates."""
    if set(neighbor_weights) != set(row):
        raise ContractViolationError(
            f"edge {edge_id}: weights cover {sorted(neighbor_weights)}, "
            f"neighbors are {sorted(row)}"
        )
    positive = [c for c in scores if c.score > 0.0]
    for c in positive:
        if c.edge_id == edge_id or c.edge_id in row:
            raise ContractViolationError(
                f"edge {edge_id}: candidate {c.edge_id} is not a valid new peer"
            )
    r = min(K_prime, len(positive), len(row))
    if r == 0:
        return row
    by_weight = sorted(row, key=lambda j: (neighbor_weights[j], j))
    removed = set(by_weight[:r])
    added = [c.edge_id for c in positive[:r]]
    return tuple(sorted((set(row) - removed) | set(added)))


def update_neighbors(
    topology: Topology,
    edge_id: int,
    neighbor_weights: dict[int, float],
    scores: list[CandidateScore],
    K_prime: int,
) -> Topology:
    """Replace up to ``K_prime`` neighbors of one edge; bumps the version.

    Only candidates with strictly positive score are eligible, so at most
    ``min(K_prime, #positive)`` swaps happen; fewer positive candidates mean
    fewer swaps, and zero mean the row is unchanged (version still bumps).
    """
    new_row = _updated_row(edge_id, topology.row(edge_id), neighbor_weights, scores, K_prime)
    rows = list(topology.neighbors)
    rows[edge_id] = new_row
    return Topology(
        n=topology.n, K=topology.K, neighbors=tuple(rows), version=topology.version + 1
    )


def selection_round(
    topology: Topology,
    weights: dict[int, AggregationWeights],
    round_index: int,
    every: int,
    K_prime: int,
) -> Topology:
    """One simultaneous reselection across all edges.

    Runs only when ``round_index`` is a multiple of ``every``; otherwise the
    topology comes back unchanged. All edges score candidates against the
    same pre-round topology and weights, then every row update is applied at
    once with a single version bump.
    """
    if every < 1:
        raise ConfigError(f"selection period must be >= 1, got {every}")
    if round_index % every != 0:
        return topology

    normalized: dict[int, dict[int, float]] = {}
    for i in range(topology.n):
        norm = normalize(weights[i])
        normalized[i] = {i: norm.self_weight, **norm.neighbor_weights}

    rows = []
    for i in range(topology.n):
        scores = two_hop_scores(topology, i, normalized)
        rows.append(
            _updated_row(i, topology.row(i), dict(weights[i].neighbor_weights), scores, K_prime)
        )
    return Topology(
        n=topology.n, K=topology.K, neighbors=tuple(rows), version=topology.version + 1
    )
