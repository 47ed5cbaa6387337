"""Experiment configs, sweeps, policy comparisons and preset calibration.

Config files are TOML with a top-level ``schema = 1``.  See the README for
the full layout; :func:`load_config` is the reference parser.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ._seeding import derive_seed
from .calibration import CalibrationResult, calibrate, load_targets_csv
from .channel import ChannelConfig, ChannelMode
from .engine import NodeConfig, SimConfig, SimResult, run
from .policies.core import POLICIES, make_policy
from .policies.hints import HintTree
from .presets import CHANNEL_PRESETS, GB, channel_preset
from .workload import STANDARD_RATIOS, WorkloadSpec, build_sweep, workload_preset

SCHEMA_VERSION = 1
DEFAULT_REPLICAS = 3
BASELINE = "baseline"

CSV_HEADER = (
    "experiment", "policy", "replica", "read_ratio", "threads", "block_size", "pattern", "node",
    "gbps_total", "gbps_read", "gbps_write", "iops", "p50_ns", "p99_ns", "turnarounds",
    "improvement_vs_baseline_pct",
)
MEAN = "mean"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    sim: SimConfig
    workload: WorkloadSpec
    policies: tuple[str, ...]
    ratios: tuple[float, ...]
    threads: tuple[int, ...]
    block_sizes: tuple[int, ...] | None = None
    replicas: int = DEFAULT_REPLICAS
    seed: int = 0
    out_dir: str = "results"
    hints: dict[str, Any] | None = None
    policy_params: dict[str, dict[str, Any]] = field(default_factory=dict)
    baseline: str = BASELINE

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if not self.policies:
            raise ConfigError("at least one policy required")
        for p in self.policies:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}; known: {sorted(POLICIES)}")
        if not self.ratios or not self.threads or (self.block_sizes is not None and not self.block_sizes):
            raise ConfigError("sweep axes must be non-empty")

    def cells(self) -> list[WorkloadSpec]:
        return build_sweep(self.workload, self.ratios, self.threads, self.block_sizes)

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def hint_tree(self) -> HintTree:
        return HintTree.from_dict(self.hints) if self.hints else HintTree()


# -- config parsing -----------------------------------------------------------

_CHANNEL_FIELDS = {f.name for f in dataclasses.fields(ChannelConfig)}
_SIM_FIELDS = {f.name for f in dataclasses.fields(SimConfig)} - {"nodes", "master_seed"}
_WORKLOAD_FIELDS = {f.name for f in dataclasses.fields(WorkloadSpec)}


def channel_from_dict(d: dict[str, Any], name: str = "") -> ChannelConfig:
    unknown = set(d) - _CHANNEL_FIELDS
    if unknown:
        raise ConfigError(f"unknown channel fields {sorted(unknown)}")
    d = dict(d)
    d.setdefault("name", name)
    if "mode" not in d:
        raise ConfigError(f"channel {name!r} needs a mode")
    return ChannelConfig(**d)


def channel_to_toml(cfg: ChannelConfig, name: str) -> str:
    lines = [f'[presets."{name}"]']
    for f in dataclasses.fields(ChannelConfig):
        v = getattr(cfg, f.name)
        if v is None or f.name == "name":
            continue
        if isinstance(v, ChannelMode):
            v = v.value
        if isinstance(v, bool):
            lines.append(f"{f.name} = {'true' if v else 'false'}")
        elif isinstance(v, str):
            lines.append(f'{f.name} = "{v}"')
        elif isinstance(v, int):
            lines.append(f"{f.name} = {v}")
        else:
            lines.append(f"{f.name} = {float(v)!r}")
    return "\n".join(lines) + "\n"


def load_preset_file(path: str | Path) -> dict[str, ChannelConfig]:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return {name: channel_from_dict(d, name) for name, d in data.get("presets", {}).items()}


def _parse_nodes(raw: list[dict], presets: dict[str, ChannelConfig]) -> tuple[NodeConfig, ...]:
    nodes = []
    for n in raw:
        if "preset" in n:
            ch = channel_preset(n["preset"], presets)
        elif "channel" in n:
            ch = channel_from_dict(n["channel"], f"node{n.get('id', len(nodes))}")
        else:
            raise ConfigError("each node needs a preset or an inline channel table")
        if "capacity_gb" in n:
            cap = int(n["capacity_gb"] * GB)
        else:
            cap = int(n.get("capacity_bytes", 64 * GB))
        nodes.append(NodeConfig(int(n.get("id", len(nodes))), ch, cap,
                                bool(n.get("has_cpus", False)), int(n.get("channels", 1))))
    return tuple(nodes)


def _ratios(v) -> tuple[float, ...]:
    if v == "standard":
        return STANDARD_RATIOS
    if isinstance(v, dict):
        n = int(round((v["stop"] - v["start"]) / v["step"])) + 1
        return tuple(round(v["start"] + i * v["step"], 10) for i in range(n))
    return tuple(float(x) for x in v)


def config_from_dict(data: dict[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config must declare schema = {SCHEMA_VERSION}")
    base_dir = Path(base_dir)
    presets: dict[str, ChannelConfig] = {}
    for p in data.get("preset_files", []):
        presets.update(load_preset_file(base_dir / p))
    for name, d in data.get("presets", {}).items():
        presets[name] = channel_from_dict(d, name)

    try:
        nodes = _parse_nodes(data.get("nodes", []), presets)
        sim_raw = dict(data.get("sim", {}))
        unknown = set(sim_raw) - _SIM_FIELDS
        if unknown:
            raise ConfigError(f"unknown [sim] fields {sorted(unknown)}")
        if "distance_matrix" in sim_raw:
            sim_raw["distance_matrix"] = tuple(tuple(r) for r in sim_raw["distance_matrix"])
        seed = int(data.get("seed", 0))
        sim = SimConfig(nodes=nodes, master_seed=seed, **sim_raw)

        wl_raw = dict(data.get("workload", {}))
        preset = wl_raw.pop("preset", None)
        unknown = set(wl_raw) - _WORKLOAD_FIELDS
        if unknown:
            raise ConfigError(f"unknown [workload] fields {sorted(unknown)}")
        if "functions" in wl_raw:
            wl_raw["functions"] = tuple(wl_raw["functions"])
        workload = workload_preset(preset, **wl_raw) if preset else WorkloadSpec(**{"name": "workload", **wl_raw})

        sweep = data.get("sweep", {})
        blocks = sweep.get("block_sizes")
        return ExperimentConfig(
            name=str(data.get("name", "experiment")),
            sim=sim,
            workload=workload,
            policies=tuple(data.get("policies", [BASELINE])),
            ratios=_ratios(sweep.get("ratios", [workload.read_ratio])),
            threads=tuple(int(x) for x in sweep.get("threads", [workload.num_threads])),
            block_sizes=None if blocks is None else tuple(int(x) for x in blocks),
            replicas=int(data.get("replicas", DEFAULT_REPLICAS)),
            seed=seed,
            out_dir=str(data.get("out", "results")),
            hints=data.get("hints"),
            policy_params=dict(data.get("policy_params", {})),
            baseline=str(data.get("baseline", BASELINE)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, path.parent)


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    experiment: str
    policy: str
    replica: str
    read_ratio: float
    threads: int
    block_size: int
    pattern: str
    node: int
    gbps_total: float
    gbps_read: float
    gbps_write: float
    iops: float
    p50_ns: float
    p99_ns: float
    turnarounds: float
    improvement_vs_baseline_pct: float | None = None

    @property
    def cell(self) -> tuple:
        return (self.experiment, self.read_ratio, self.threads, self.block_size, self.pattern, self.node)

    def to_csv(self) -> list[str]:
        out = []
        for name in CSV_HEADER:
            v = getattr(self, name)
            out.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        return out

    @classmethod
    def from_csv(cls, rec: dict[str, str]) -> "ResultRow":
        imp = rec["improvement_vs_baseline_pct"]
        return cls(
            rec["experiment"], rec["policy"], rec["replica"], float(rec["read_ratio"]), int(rec["threads"]),
            int(rec["block_size"]), rec["pattern"], int(rec["node"]), float(rec["gbps_total"]),
            float(rec["gbps_read"]), float(rec["gbps_write"]), float(rec["iops"]), float(rec["p50_ns"]),
            float(rec["p99_ns"]), float(rec["turnarounds"]), None if imp == "" else float(imp),
        )


@dataclass(frozen=True)
class Job:
    cell_index: int
    policy: str
    replica: int


def replica_seed(master: int, replica: int) -> int:
    return derive_seed(master, replica)


def simulate_cell(config: ExperimentConfig, spec: WorkloadSpec, policy: str, replica: int) -> SimResult:
    sim = dataclasses.replace(config.sim, master_seed=replica_seed(config.seed, replica))
    return run(sim, [spec], make_policy(policy, config.policy_params.get(policy)), config.hint_tree())


def _row(config: ExperimentConfig, spec: WorkloadSpec, policy: str, replica: str, res: SimResult) -> ResultRow:
    return ResultRow(
        config.name, policy, replica, spec.read_ratio, spec.num_threads, spec.block_size_bytes,
        spec.pattern.value, spec.target_node, res.gbps_total, res.gbps_read, res.gbps_write,
        res.iops, res.p50_ns, res.p99_ns, float(res.turnarounds),
    )


def _run_job(args: tuple[ExperimentConfig, Job]) -> ResultRow:
    config, job = args
    spec = config.cells()[job.cell_index]
    res = simulate_cell(config, spec, job.policy, job.replica)
    return _row(config, spec, job.policy, str(job.replica), res)


def improvement_pct(value: float, baseline: float) -> float:
    if baseline == 0:
        return math.nan
    return (value - baseline) / baseline * 100.0


def _mean_row(rows: Sequence[ResultRow]) -> ResultRow:
    first = rows[0]
    avg = lambda name: math.fsum(getattr(r, name) for r in rows) / len(rows)
    return dataclasses.replace(
        first, replica=MEAN,
        gbps_total=avg("gbps_total"), gbps_read=avg("gbps_read"), gbps_write=avg("gbps_write"),
        iops=avg("iops"), p50_ns=avg("p50_ns"), p99_ns=avg("p99_ns"), turnarounds=avg("turnarounds"),
    )


def _with_improvements(rows: list[ResultRow], baseline: str) -> list[ResultRow]:
    ref = {(r.cell, r.replica): r.gbps_total for r in rows if r.policy == baseline}
    out = []
    for r in rows:
        b = ref.get((r.cell, r.replica))
        out.append(r if b is None else dataclasses.replace(r, improvement_vs_baseline_pct=improvement_pct(r.gbps_total, b)))
    return out


def write_csv(rows: Iterable[ResultRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.to_csv())
    return path


def read_csv(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow.from_csv(rec) for rec in reader]


def run_sweep(config: ExperimentConfig, parallel: int = 1, out: str | Path | None = None) -> list[ResultRow]:
    """Simulate every (cell, policy, replica) and append replica-mean rows.

    Row order is cell-major, then policy (config order), then replica, with
    each group's mean row last.  Jobs may finish in any order under
    ``parallel > 1``; the merge order is fixed.  On failure, rows completed
    so far are written before the error propagates.
    """
    cells = config.cells()
    jobs = [Job(c, p, k) for c in range(len(cells)) for p in config.policies for k in range(config.replicas)]
    path = Path(out if out is not None else config.out_dir) / f"{config.name}.csv"
    done: list[ResultRow] = []
    try:
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                for row in pool.map(_run_job, [(config, j) for j in jobs]):
                    done.append(row)
        else:
            for j in jobs:
                done.append(_run_job((config, j)))
    except BaseException:
        write_csv(_with_improvements(done, config.baseline), path)
        raise
    rows = []
    k = config.replicas
    for i in range(0, len(done), k):
        group = done[i:i + k]
        rows.extend(group)
        rows.append(_mean_row(group))
    rows = _with_improvements(rows, config.baseline)
    write_csv(rows, path)
    return rows


# -- comparisons --------------------------------------------------------------

@dataclass(frozen=True)
class PolicyComparison:
    policy: str
    baseline: str
    per_cell: dict[tuple, float]

    @property
    def mean_pct(self) -> float:
        return math.fsum(self.per_cell.values()) / len(self.per_cell)

    @property
    def max_cell(self) -> tuple[tuple, float]:
        return max(self.per_cell.items(), key=lambda kv: kv[1])


def _cell_means(rows: Sequence[ResultRow]) -> dict[tuple[str, tuple], float]:
    means = {(r.policy, r.cell): r.gbps_total for r in rows if r.replica == MEAN}
    if means:
        return means
    acc: dict[tuple[str, tuple], list[float]] = {}
    for r in rows:
        acc.setdefault((r.policy, r.cell), []).append(r.gbps_total)
    return {k: math.fsum(v) / len(v) for k, v in acc.items()}


def compare_policies(rows_or_csv: Sequence[ResultRow] | str | Path, baseline_name: str = BASELINE) -> list[PolicyComparison]:
    rows = read_csv(rows_or_csv) if isinstance(rows_or_csv, (str, Path)) else list(rows_or_csv)
    means = _cell_means(rows)
    policies = []
    for r in rows:
        if r.policy != baseline_name and r.policy not in policies:
            policies.append(r.policy)
    out = []
    for p in policies:
        per_cell = {}
        for (pol, cell), v in means.items():
            if pol != p:
                continue
            b = means.get((baseline_name, cell))
            if b is None:
                raise KeyError(f"no {baseline_name!r} rows for cell {cell}")
            per_cell[cell] = improvement_pct(v, b)
        out.append(PolicyComparison(p, baseline_name, per_cell))
    return out


def format_comparison(comps: Sequence[PolicyComparison]) -> str:
    lines = ["policy,baseline,cells,mean_improvement_pct,max_improvement_pct,max_cell"]
    for c in comps:
        cell, best = c.max_cell
        lines.append(f"{c.policy},{c.baseline},{len(c.per_cell)},{c.mean_pct!r},{best!r},"
                     f"\"{'/'.join(str(x) for x in cell)}\"")
    return "\n".join(lines) + "\n"


# -- calibration ----------------------------------------------------------------

def calibrate_preset(name: str, targets_csv: str | Path, mode: ChannelMode | str = ChannelMode.FULL_DUPLEX,
                     out: str | Path | None = None, base: str | None = None,
                     in_order: bool = True) -> tuple[CalibrationResult, Path]:
    """Fit a channel to ``targets_csv`` and write it as a preset TOML file."""
    targets = load_targets_csv(targets_csv)
    base_cfg = channel_preset(base) if base else None
    result = calibrate(targets, mode, base_cfg, in_order=in_order)
    cfg = result.config.with_(name=name)
    path = Path(out) if out is not None else Path(f"{name}.toml")
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# fitted to {Path(targets_csv).name}; max relative error {result.max_rel_error:.4f}",
             channel_to_toml(cfg, name)]
    path.write_text("\n".join(lines))
    return result, path


def preset_table() -> list[tuple[str, ChannelConfig]]:
    return sorted(CHANNEL_PRESETS.items())


def resolve_seed(cli_seed: int | None, config_seed: int, env: dict[str, str] | None = None) -> int:
    """``--seed`` beats ``DUPLEXSIM_SEED`` beats the config file."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ if env is None else env
    raw = env.get("DUPLEXSIM_SEED")
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"DUPLEXSIM_SEED must be an integer, got {raw!r}") from None
    return config_seed
