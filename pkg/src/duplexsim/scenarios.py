"""Canned experiments used by the acceptance suite and shipped as configs.

Each ``*_config`` function returns the raw config mapping (the same shape as
a TOML file under ``configs/``); the matching runner turns the sweep rows
into the summary numbers the acceptance checks look at.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .channel import effective_bandwidth
from .experiments import ExperimentConfig, ResultRow, config_from_dict, run_sweep
from .presets import WRITE_READ_RATIO, channel_preset

RATIO_STEP_SWEEP = {"start": 0.0, "stop": 1.0, "step": 0.05}


def _single_node(preset: str, cpus: int, channels: int = 1, cpus_per_cluster: int | None = None,
                 capacity_gb: int = 512) -> dict[str, Any]:
    return {
        "sim": {"cpus": cpus, "cpus_per_cluster": cpus_per_cluster or cpus},
        "nodes": [{"id": 0, "preset": preset, "capacity_gb": capacity_gb, "has_cpus": True, "channels": channels}],
    }


def duplex_peak_config(preset: str = "cxl-512", horizon_ns: int = 3_000_000, seed: int = 1) -> dict[str, Any]:
    d = _single_node(preset, cpus=8)
    d["sim"]["horizon_ns"] = horizon_ns
    d.update(schema=1, name=f"ratio-sweep-{preset}", seed=seed, replicas=1, policies=["baseline"],
             workload={"name": "microbench", "num_threads": 8, "block_size_bytes": 4096},
             sweep={"ratios": dict(RATIO_STEP_SWEEP), "threads": [8]})
    return d


def halfduplex_config(horizon_ns: int = 500_000, seed: int = 1) -> dict[str, Any]:
    return duplex_peak_config("ddr5", horizon_ns, seed) | {"name": "ratio-sweep-ddr5"}


def latency_hiding_config(kind: str, horizon_ns: int = 200_000, seed: int = 1,
                          threads: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 8, 12, 16)) -> dict[str, Any]:
    """Pure reads, one outstanding request per thread, equal capacity."""
    lat = {"ddr": [75.0, 85.0], "cxl": [130.0, 200.0]}[kind]
    chan = {"mode": "full", "read_capacity_gbps": 100.0, "write_capacity_gbps": 100.0,
            "base_latency_ns_min": lat[0], "base_latency_ns_max": lat[1]}
    return {
        "schema": 1, "name": f"latency-hiding-{kind}", "seed": seed, "replicas": 1, "policies": ["baseline"],
        "presets": {f"{kind}-like": chan},
        "sim": {"cpus": max(threads), "cpus_per_cluster": max(threads), "horizon_ns": horizon_ns,
                "inflight_depth": 1},
        "nodes": [{"id": 0, "preset": f"{kind}-like", "capacity_gb": 64, "has_cpus": True}],
        "workload": {"name": "reader", "read_ratio": 1.0},
        "sweep": {"ratios": [1.0], "threads": list(threads)},
    }


def scheduling_benefit_config(horizon_ns: int = 3_000_000, seed: int = 1,
                              ratios: tuple[float, ...] = (0.4, 0.45, 0.5, 0.55, 0.6),
                              policies: tuple[str, ...] = ("baseline", "segregate", "colocate", "timeseries"),
                              threads: int = 8) -> dict[str, Any]:
    """Unidirectional reader/writer pools on two clusters, one channel each."""
    d = _single_node("cxl-512", cpus=8, channels=2, cpus_per_cluster=4)
    d["sim"]["horizon_ns"] = horizon_ns
    d.update(schema=1, name="scheduling-benefit", seed=seed, replicas=1, policies=list(policies),
             workload={"name": "pools", "num_threads": threads, "split_pools": True},
             sweep={"ratios": list(ratios), "threads": [threads]})
    return d


def unidirectional_config(horizon_ns: int = 2_000_000, seed: int = 1) -> dict[str, Any]:
    d = scheduling_benefit_config(horizon_ns, seed, ratios=(0.0, 1.0), policies=("baseline", "timeseries"))
    d["name"] = "unidirectional"
    d["sweep"]["threads"] = [8, 16]
    return d


SCENARIOS = {
    "ratio-sweep-cxl-512": duplex_peak_config,
    "ratio-sweep-ddr5": halfduplex_config,
    "latency-hiding-ddr": lambda: latency_hiding_config("ddr"),
    "latency-hiding-cxl": lambda: latency_hiding_config("cxl"),
    "scheduling-benefit": scheduling_benefit_config,
    "unidirectional": unidirectional_config,
}


def build(raw: dict[str, Any]) -> ExperimentConfig:
    return config_from_dict(raw)


def _replica_rows(rows: list[ResultRow]) -> list[ResultRow]:
    return [r for r in rows if r.replica != "mean"]


@dataclass(frozen=True)
class RatioCurve:
    ratios: tuple[float, ...]
    gbps: tuple[float, ...]

    @property
    def peak_ratio(self) -> float:
        return self.ratios[max(range(len(self.gbps)), key=lambda i: self.gbps[i])]

    @property
    def peak_gbps(self) -> float:
        return max(self.gbps)

    def at(self, r: float) -> float:
        return self.gbps[self.ratios.index(r)]

    @property
    def improvement_over_pure_write_pct(self) -> float:
        return (self.peak_gbps / self.at(0.0) - 1.0) * 100.0

    @property
    def max_over_min(self) -> float:
        return max(self.gbps) / min(self.gbps)


def ratio_curve(cfg: ExperimentConfig, out: str | Path) -> RatioCurve:
    rows = _replica_rows(run_sweep(cfg, out=out))
    return RatioCurve(tuple(r.read_ratio for r in rows), tuple(r.gbps_total for r in rows))


def write_read_ratios() -> dict[str, float]:
    """Pure-write over pure-read throughput for the calibrated presets."""
    return {name: effective_bandwidth(channel_preset(name), 0.0) / effective_bandwidth(channel_preset(name), 1.0)
            for name in WRITE_READ_RATIO}


@dataclass(frozen=True)
class ThreadScaling:
    threads: tuple[int, ...]
    gbps: tuple[float, ...]

    def threads_to_fraction(self, frac: float = 0.95) -> int:
        peak = max(self.gbps)
        return next(t for t, g in zip(self.threads, self.gbps) if g >= frac * peak)


def thread_scaling(cfg: ExperimentConfig, out: str | Path) -> ThreadScaling:
    rows = _replica_rows(run_sweep(cfg, out=out))
    return ThreadScaling(tuple(r.threads for r in rows), tuple(r.gbps_total for r in rows))


def policy_table(cfg: ExperimentConfig, out: str | Path) -> dict[tuple[float, int, str], float]:
    """(read_ratio, threads, policy) -> GB/s."""
    rows = _replica_rows(run_sweep(cfg, out=out))
    return {(r.read_ratio, r.threads, r.policy): r.gbps_total for r in rows}
