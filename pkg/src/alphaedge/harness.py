"""Experiment harness: config files in, metric reports out.

An experiment is a grid of (strategy, seed) simulation runs over one data
source. Per run it writes a per-batch metrics table; per experiment a
deterministic ``summary.json`` (per-run and per-strategy means), a
``trace.json`` with weight and topology histories, and a ``run_meta.json``
with timing — timing stays out of summary.json so reruns of the same config
produce byte-identical result files.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from . import __version__ as _version
from .errors import ConfigError
from .metrics import MetricSeries, auc, one_minus_smape
from .model import ModelSpec
from .seeding import derive_seed
from .simulation import STRATEGIES, SimConfig, SimulationResult, run_simulation
from .streams import CsvSchema, StreamBatch, SynthSpec, generate_synthetic, load_csv

SWEEP_AXES = {
    "E": int,
    "K": int,
    "K_prime": int,
    "m": int,
    "B": int,
    "alpha_steps": int,
    "alpha_accumulate_batches": int,
    "delay_batches": int,
    "async_rounds": int,
    "drop_fraction": float,
    "adversarial_fraction": float,
}


@dataclass(frozen=True)
class CsvSource:
    """A stream collection replayed from a CSV file."""

    path: str
    schema: CsvSchema


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ConfigError(
                f"cannot sweep {self.axis!r}; choose one of {sorted(SWEEP_AXES)}"
            )
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        cast = SWEEP_AXES[self.axis]
        object.__setattr__(self, "values", tuple(cast(v) for v in self.values))


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig
    data: SynthSpec | CsvSource
    seeds: tuple[int, ...]
    strategies: tuple[str, ...]
    window: int = 50
    sweep: SweepSpec | None = None


@dataclass
class RunSummary:
    """Per-(strategy, seed) outcome on the non-adversarial edges."""

    strategy: str
    seed: int
    overall_mean: float | None
    window_mean: float | None
    per_edge_means: dict[int, float]
    adversarial_edges: list[int]
    aggregation_rounds: int
    messages_fetched: int

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "overall_mean": self.overall_mean,
            "window_mean": self.window_mean,
            "per_edge_means": {str(k): v for k, v in sorted(self.per_edge_means.items())},
            "adversarial_edges": self.adversarial_edges,
            "aggregation_rounds": self.aggregation_rounds,
            "messages_fetched": self.messages_fetched,
        }


@dataclass
class ExperimentReport:
    config_echo: dict
    runs: list[RunSummary]
    strategy_means: dict[str, dict]
    wall_time_seconds: float

    def to_dict(self) -> dict:
        """Everything except timing, which run_meta.json carries."""
        return {
            "config": self.config_echo,
            "runs": [r.to_dict() for r in self.runs],
            "strategies": self.strategy_means,
        }


# --------------------------------------------------------------------------
# Config loading
# --------------------------------------------------------------------------


def _require_keys(section: str, given: dict, allowed: set[str], required: set[str] = frozenset()) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    missing = required - set(given)
    if missing:
        raise ConfigError(f"{section} is missing required keys {sorted(missing)}")


def _model_from_dict(raw: dict) -> ModelSpec:
    _require_keys(
        "model", raw, {"kind", "input_dim", "hidden_layers", "activation", "output"},
        {"kind", "input_dim"},
    )
    raw = dict(raw)
    if "hidden_layers" in raw:
        raw["hidden_layers"] = tuple(raw["hidden_layers"])
    return ModelSpec(**raw)


def _sim_from_dict(raw: dict) -> SimConfig:
    fields = {f.name for f in dataclasses.fields(SimConfig)}
    _require_keys("sim", raw, fields, {"n", "model"})
    raw = dict(raw)
    raw["model"] = _model_from_dict(raw["model"])
    sim = SimConfig(**raw)
    sim.validate()
    return sim


def _data_from_dict(raw: dict, sim: SimConfig) -> SynthSpec | CsvSource:
    _require_keys("data", raw, {"synthetic", "csv"})
    if ("synthetic" in raw) == ("csv" in raw):
        raise ConfigError("data must contain exactly one of 'synthetic' or 'csv'")
    if "synthetic" in raw:
        section = dict(raw["synthetic"])
        fields = {f.name for f in dataclasses.fields(SynthSpec)}
        _require_keys("data.synthetic", section, fields)
        if "cluster_assignment" in section and section["cluster_assignment"] is not None:
            section["cluster_assignment"] = tuple(section["cluster_assignment"])
        section.setdefault("n_edges", sim.n)
        section.setdefault("input_dim", sim.model.input_dim)
        section.setdefault("batch_size", sim.B)
        section.setdefault("n_clusters", 1)
        spec = SynthSpec(**section)
        if spec.n_edges != sim.n:
            raise ConfigError(f"data has {spec.n_edges} edges but sim.n is {sim.n}")
        if spec.input_dim != sim.model.input_dim:
            raise ConfigError(
                f"data input_dim {spec.input_dim} != model input_dim {sim.model.input_dim}"
            )
        if spec.batch_size != sim.B:
            raise ConfigError(f"data batch_size {spec.batch_size} != sim B {sim.B}")
        if spec.task != sim.task():
            raise ConfigError(
                f"data task {spec.task!r} does not match the model's "
                f"{sim.model.output!r} head"
            )
        return spec
    section = dict(raw["csv"])
    _require_keys(
        "data.csv", section,
        {"path", "edge_col", "time_col", "label_col", "feature_cols"},
        {"path", "feature_cols"},
    )
    path = section.pop("path")
    section["feature_cols"] = tuple(section["feature_cols"])
    return CsvSource(path=path, schema=CsvSchema(**section))


def load_config(path: str) -> ExperimentConfig:
    """Parse and cross-validate a JSON experiment config."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    _require_keys(
        "config", raw, {"sim", "data", "seeds", "strategies", "report", "sweep"},
        {"sim", "data"},
    )
    sim = _sim_from_dict(raw["sim"])
    data = _data_from_dict(raw["data"], sim)

    seeds = raw.get("seeds", [sim.seed])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"duplicate seeds in {seeds}")

    strategies = raw.get("strategies", [sim.strategy])
    if not isinstance(strategies, list) or not strategies:
        raise ConfigError("strategies must be a non-empty list")
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {list(STRATEGIES)}")
    if len(set(strategies)) != len(strategies):
        raise ConfigError(f"duplicate strategies in {strategies}")

    report = raw.get("report", {})
    _require_keys("report", report, {"window"})
    window = report.get("window", 50)
    if not isinstance(window, int) or window < 1:
        raise ConfigError(f"report.window must be a positive integer, got {window!r}")

    sweep = None
    if "sweep" in raw:
        _require_keys("sweep", raw["sweep"], {"axis", "values"}, {"axis", "values"})
        sweep = SweepSpec(axis=raw["sweep"]["axis"], values=tuple(raw["sweep"]["values"]))

    return ExperimentConfig(
        sim=sim,
        data=data,
        seeds=tuple(seeds),
        strategies=tuple(strategies),
        window=window,
        sweep=sweep,
    )


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------


def _materialize(
    data: SynthSpec | CsvSource, sim: SimConfig, run_seed: int, cache: dict
) -> dict[int, list[StreamBatch]]:
    if isinstance(data, SynthSpec):
        spec = replace(
            data,
            seed=derive_seed(data.seed, f"run-{run_seed}"),
            batch_size=sim.B,
        )
        return generate_synthetic(spec)
    key = (data.path, sim.B)
    if key not in cache:
        streams, _ = load_csv(data.path, data.schema, sim.B)
        cache[key] = streams
    streams = cache[key]
    if len(streams) != sim.n:
        raise ConfigError(f"{data.path} holds {len(streams)} edges but sim.n is {sim.n}")
    return streams


def _metric_rows(result: SimulationResult) -> tuple[list[dict], dict[int, MetricSeries]]:
    """Score every record; batches whose metric is undefined are dropped."""
    metric = result.config.metric
    rows: list[dict] = []
    series: dict[int, MetricSeries] = {i: MetricSeries() for i in range(result.config.n)}
    for rec in result.records:
        if rec.labels is None:
            continue
        if metric == "auc":
            value = auc(rec.labels, rec.predictions)
            if value is None:
                continue
        else:
            value = one_minus_smape(rec.labels, rec.predictions)
        series[rec.edge_id].append(rec.step, value, weight=rec.batch_size)
        rows.append(
            {
                "edge_id": rec.edge_id,
                "step": rec.step,
                "metric_value": value,
                "is_aggregation_step": int(rec.is_aggregation_step),
                "batch_size": rec.batch_size,
            }
        )
    return rows, series


def summarize_run(result: SimulationResult, window: int) -> RunSummary:
    """Collapse one simulation into normal-edge means."""
    _, series = _metric_rows(result)
    return _summarize(result, series, window)


def _summarize(
    result: SimulationResult, series: dict[int, MetricSeries], window: int
) -> RunSummary:
    per_edge = {
        i: s.cumulative_mean()
        for i, s in series.items()
        if s.cumulative_mean() is not None
    }
    normal = [i for i in sorted(per_edge) if i not in result.adversarial_edges]
    overall = float(np.mean([per_edge[i] for i in normal])) if normal else None
    window_means = [series[i].window_mean(window) for i in normal]
    window_mean = float(np.mean(window_means)) if window_means else None
    return RunSummary(
        strategy=result.config.strategy,
        seed=result.config.seed,
        overall_mean=overall,
        window_mean=window_mean,
        per_edge_means=per_edge,
        adversarial_edges=list(result.adversarial_edges),
        aggregation_rounds=result.aggregation_rounds,
        messages_fetched=result.messages_fetched,
    )


def _write_rows(rows: list[dict], path_base: str, fmt: str) -> str:
    columns = ["edge_id", "step", "metric_value", "is_aggregation_step", "batch_size"]
    if fmt == "csv":
        path = path_base + ".csv"
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    else:
        path = path_base + ".json"
        with open(path, "w") as fh:
            json.dump({"rows": rows}, fh, sort_keys=True)
    return path


def _json_dump(payload: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _config_echo(config: ExperimentConfig, sim: SimConfig) -> dict:
    sim_dict = dataclasses.asdict(sim)
    sim_dict["model"]["hidden_layers"] = list(sim_dict["model"]["hidden_layers"])
    if isinstance(config.data, SynthSpec):
        data_dict: dict = {"synthetic": dataclasses.asdict(config.data)}
        ca = data_dict["synthetic"]["cluster_assignment"]
        if ca is not None:
            data_dict["synthetic"]["cluster_assignment"] = list(ca)
    else:
        data_dict = {
            "csv": {
                "path": config.data.path,
                "edge_col": config.data.schema.edge_col,
                "time_col": config.data.schema.time_col,
                "label_col": config.data.schema.label_col,
                "feature_cols": list(config.data.schema.feature_cols),
            }
        }
    return {
        "sim": sim_dict,
        "data": data_dict,
        "seeds": list(config.seeds),
        "strategies": list(config.strategies),
        "window": config.window,
    }


def _strategy_means(runs: list[RunSummary]) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for strategy in sorted({r.strategy for r in runs}):
        means = [r.overall_mean for r in runs if r.strategy == strategy]
        if any(m is None for m in means):
            out[strategy] = {"mean": None, "std": None, "stderr": None, "per_seed": means}
            continue
        arr = np.array(means, dtype=float)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[strategy] = {
            "mean": float(arr.mean()),
            "std": std,
            "stderr": std / float(np.sqrt(arr.size)),
            "per_seed": [float(m) for m in arr],
        }
    return out


def run_experiment(
    config: ExperimentConfig,
    out_dir: str,
    fmt: str = "csv",
    workers: int = 1,
    quiet: bool = False,
) -> ExperimentReport:
    """Run the full strategy x seed grid and write the report files."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown output format {fmt!r}")
    started = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    cache: dict = {}
    runs: list[RunSummary] = []
    traces: dict[str, dict] = {}
    for strategy in config.strategies:
        for seed in config.seeds:
            sim = replace(config.sim, strategy=strategy, seed=seed)
            streams = _materialize(config.data, sim, seed, cache)
            result = run_simulation(sim, streams, workers=workers)
            rows, series = _metric_rows(result)
            summary = _summarize(result, series, config.window)
            runs.append(summary)
            name = f"metrics_{strategy}_seed{seed}"
            _write_rows(rows, os.path.join(out_dir, name), fmt)
            traces[f"{strategy}_seed{seed}"] = {
                "adversarial_edges": list(result.adversarial_edges),
                "weight_trace": result.weight_trace,
                "topology_trace": result.topology_trace,
            }
            if not quiet:
                shown = "n/a" if summary.overall_mean is None else f"{summary.overall_mean:.4f}"
                print(f"{strategy} seed={seed}: mean={shown}")

    report = ExperimentReport(
        config_echo=_config_echo(config, config.sim),
        runs=runs,
        strategy_means=_strategy_means(runs),
        wall_time_seconds=time.perf_counter() - started,
    )
    _json_dump(report.to_dict(), os.path.join(out_dir, "summary.json"))
    _json_dump({"runs": traces}, os.path.join(out_dir, "trace.json"))
    _json_dump(
        {
            "wall_time_seconds": report.wall_time_seconds,
            "workers": workers,
            "version": _version,
        },
        os.path.join(out_dir, "run_meta.json"),
    )
    return report


def run_sweep(
    config: ExperimentConfig,
    out_dir: str,
    fmt: str = "csv",
    workers: int = 1,
    quiet: bool = False,
) -> dict:
    """Repeat the strategy x seed grid along the configured sweep axis."""
    if config.sweep is None:
        raise ConfigError("config has no sweep section")
    started = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    cache: dict = {}
    rows: list[dict] = []
    summary: dict[str, dict] = {}
    for value in config.sweep.values:
        sim_base = replace(config.sim, **{config.sweep.axis: value})
        sim_base.validate()
        for strategy in config.strategies:
            means = []
            for seed in config.seeds:
                sim = replace(sim_base, strategy=strategy, seed=seed)
                streams = _materialize(config.data, sim, seed, cache)
                result = run_simulation(sim, streams, workers=workers)
                run = summarize_run(result, config.window)
                rows.append(
                    {
                        config.sweep.axis: value,
                        "strategy": strategy,
                        "seed": seed,
                        "overall_mean": run.overall_mean,
                    }
                )
                if run.overall_mean is not None:
                    means.append(run.overall_mean)
                if not quiet:
                    shown = "n/a" if run.overall_mean is None else f"{run.overall_mean:.4f}"
                    print(f"{config.sweep.axis}={value} {strategy} seed={seed}: {shown}")
            summary.setdefault(str(value), {})[strategy] = (
                float(np.mean(means)) if means else None
            )

    if fmt == "csv":
        pd.DataFrame(rows).to_csv(os.path.join(out_dir, "sweep.csv"), index=False)
    else:
        _json_dump({"rows": rows}, os.path.join(out_dir, "sweep_rows.json"))
    _json_dump(
        {"axis": config.sweep.axis, "means": summary},
        os.path.join(out_dir, "sweep.json"),
    )
    _json_dump(
        {"wall_time_seconds": time.perf_counter() - started, "workers": workers},
        os.path.join(out_dir, "run_meta.json"),
    )
    return summary
