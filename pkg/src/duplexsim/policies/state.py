"""Read-only views the simulator hands to policies, and policy decisions."""
from __future__ import annotations

from dataclasses import dataclass, field

from .hints import EffectiveHint
from .timeseries import MetricSample


@dataclass
class TaskView:
    task_id: int
    weight: float
    vruntime: float
    # CPU time consumed since the policy last charged this task
    exec_ns: float = 0.0
    prev_cpu: int | None = None
    node: int = 0
    declared_read_ratio: float = 0.5
    read_bytes: int = 0
    write_bytes: int = 0
    # GB/s completed by this task over the last sample period
    bandwidth_gbps: float | None = None
    hint: EffectiveHint = field(default_factory=EffectiveHint)

    @property
    def observed_read_ratio(self) -> float | None:
        tot = self.read_bytes + self.write_bytes
        return None if tot == 0 else self.read_bytes / tot


@dataclass
class SchedulerState:
    now_ns: float
    cpus: int
    cpu_cluster: list[int]
    # tasks needing a dispatch decision, in arrival order
    runnable: list[TaskView]
    # every live task, including running and queued ones
    tasks: dict[int, TaskView]
    # task ids currently running on or queued for each CPU
    cpu_tasks: list[list[int]]
    cpu_read_depth: list[int] = field(default_factory=list)
    cpu_write_depth: list[int] = field(default_factory=list)
    # latest sample-period bandwidth by (node, "read" | "write")
    node_bandwidth: dict[tuple[int, str], float] = field(default_factory=dict)
    latency_p50_ns: float | None = None
    latency_p99_ns: float | None = None
    # balance target per node (channel-model optimum)
    balance_point: dict[int, float] = field(default_factory=dict)
    mvruntime: float = 0.0
    # every metric sample emitted so far (policies track their own cursor)
    samples: list[MetricSample] = field(default_factory=list)

    @property
    def clusters(self) -> int:
        return max(self.cpu_cluster) + 1 if self.cpu_cluster else 0


@dataclass(frozen=True)
class Dispatch:
    task_id: int
    cpu: int
    slice_ns: float
    # run-queue ordering key (lower runs first, ties by task_id)
    key: float
    deadline: float
    vruntime: float
    reason: str = ""


@dataclass(frozen=True)
class Feedback:
    now_ns: float
    sample: MetricSample
    # task_id -> (read_gbps, write_gbps) over the sample period
    task_bandwidth: dict[int, tuple[float, float]] = field(default_factory=dict)
