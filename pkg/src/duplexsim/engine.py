"""Deterministic discrete-event simulator.

Simulated CPUs (grouped into clusters) run tasks chosen by a pluggable
policy.  A running task keeps up to ``inflight_depth`` memory requests
outstanding against its workload's target node; each cluster feeds one of
the node's channel instances.  All time is virtual and every tie is broken
by insertion sequence, so identical inputs give identical results.
"""
from __future__ import annotations

import enum
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._seeding import derive_seed
from .cax import CaxTree, SamplerState, adapt_period
from .channel import ChannelConfig, ChannelState, Direction, optimal_read_ratio, serve
from .policies.core import Policy
from .policies.hints import EffectiveHint, HintTree, resolve_hint
from .policies.state import Dispatch, Feedback, SchedulerState, TaskView
from .policies.timeseries import MetricSample
from .presets import DEFAULT_DISTANCE_MATRIX
from .workload import ThreadCursor, TokenBucket, WorkloadSpec, make_bucket, make_cursor, next_request

DEFAULT_INFLIGHT_DEPTH = 16


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    channel: ChannelConfig
    capacity_bytes: int
    has_cpus: bool = False
    # independent channel instances; CPU cluster k feeds instance k % channels
    channels: int = 1

    def __post_init__(self):
        if self.capacity_bytes < 0:
            raise ValueError("capacity_bytes must be >= 0")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    cpus: int
    cpus_per_cluster: int
    nodes: tuple[NodeConfig, ...]
    distance_matrix: tuple[tuple[float, ...], ...] | None = None
    master_seed: int = 0
    horizon_ns: int = 10_000_000
    sample_period_ns: int = 1_000_000
    inflight_depth: int = DEFAULT_INFLIGHT_DEPTH
    # CPU time between consecutive requests of one task
    think_time_ns: float = 0.0
    context_switch_ns: float = 0.0
    adaptive_sampling: bool = False
    min_sample_period_ns: int = 500_000
    max_sample_period_ns: int = 8_000_000

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.cpus < 1 or self.cpus_per_cluster < 1:
            raise ValueError("need cpus >= 1 and cpus_per_cluster >= 1")
        if not self.nodes:
            raise ValueError("at least one node required")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate node ids {ids}")
        n = len(self.nodes)
        dm = self.distance_matrix
        if dm is None:
            dm = DEFAULT_DISTANCE_MATRIX if n == len(DEFAULT_DISTANCE_MATRIX) else [[1.0] * n for _ in range(n)]
        dm = tuple(tuple(float(x) for x in row) for row in dm)
        object.__setattr__(self, "distance_matrix", dm)
        if len(dm) != n or any(len(row) != n for row in dm):
            raise ValueError("distance_matrix must be square with one row per node")
        for i, row in enumerate(dm):
            if row[i] != 1.0:
                raise ValueError("distance_matrix diagonal must be 1.0")
            if min(row) < 1.0:
                raise ValueError("distance_matrix entries must be >= 1.0")
        if self.horizon_ns <= 0 or self.sample_period_ns <= 0:
            raise ValueError("horizon_ns and sample_period_ns must be > 0")
        if self.inflight_depth < 1:
            raise ValueError("inflight_depth must be >= 1")
        if self.think_time_ns < 0 or self.context_switch_ns < 0:
            raise ValueError("think_time_ns and context_switch_ns must be >= 0")

    @property
    def clusters(self) -> int:
        return -(-self.cpus // self.cpus_per_cluster)

    def node_index(self, node_id: int) -> int:
        for i, n in enumerate(self.nodes):
            if n.node_id == node_id:
                return i
        raise KeyError(f"unknown node {node_id}")

    def cpu_home_node(self, cpu: int) -> int | None:
        homes = [n.node_id for n in self.nodes if n.has_cpus]
        if not homes:
            return None
        return homes[cpu * len(homes) // self.cpus]


class TaskState(enum.Enum):
    RUNNABLE = "runnable"
    RUNNING = "running"
    BLOCKED = "blocked-on-memory"
    DONE = "done"


@dataclass(eq=False)
class TaskControlBlock:
    task_id: int
    workload: WorkloadSpec
    thread_index: int
    weight: float
    hint: EffectiveHint
    cursor: ThreadCursor
    bucket: TokenBucket | None
    end_ns: float
    thread_ctx: int = 0
    state: TaskState = TaskState.RUNNABLE
    vruntime: float = 0.0
    deadline: float = 0.0
    slice_ns: float = 0.0
    assigned_cpu: int | None = None
    read_bytes: int = 0
    write_bytes: int = 0
    inflight_read: int = 0
    inflight_write: int = 0
    # bumped whenever the task leaves a CPU; stale wakeups carry old values
    token: int = 0
    dispatch_gen: int = 0
    queued_cpu: int | None = None
    exec_pending_ns: float = 0.0
    exec_total_ns: float = 0.0
    run_start_ns: float = 0.0
    next_issue_ns: float = 0.0
    period_read: int = 0
    period_write: int = 0
    recent_gbps: float | None = None
    migrations: int = 0
    switches: int = 0
    slices: int = 0

    @property
    def inflight(self) -> int:
        return self.inflight_read + self.inflight_write

    @property
    def observed_read_ratio(self) -> float | None:
        tot = self.read_bytes + self.write_bytes
        return None if tot == 0 else self.read_bytes / tot

    @property
    def on_cpu(self) -> bool:
        return self.state is TaskState.RUNNING or self.state is TaskState.BLOCKED


class EventKind(enum.IntEnum):
    TASK_ARRIVE = 0
    REQUEST_COMPLETE = 1
    TIME_SLICE_EXPIRE = 2
    SAMPLE_TICK = 3
    CHANNEL_FREE = 4
    ISSUE_READY = 5
    TASK_END = 6
    POLICY_SWITCH = 7


class EventQueue:
    """Min-queue of ``(time_ns, sequence, kind, payload)``."""

    def __init__(self):
        self._heap: list = []
        self._seq = 0

    def push(self, t: float, kind: EventKind, payload=None) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def pop(self):
        return heapq.heappop(self._heap)

    def peek_time(self) -> float:
        return self._heap[0][0]

    def __len__(self):
        return len(self._heap)


@dataclass(eq=False)
class _Channel:
    node_id: int
    instance: int
    config: ChannelConfig
    state: ChannelState
    wake_at: float | None = None


@dataclass(eq=False)
class _Cpu:
    cpu_id: int
    cluster: int
    home_node: int | None
    current: TaskControlBlock | None = None
    # task switched out at the current timestamp, resolved by _start_cpus
    last_task: TaskControlBlock | None = None
    runqueue: list = field(default_factory=list)
    slice_token: int = 0
    busy_ns: float = 0.0


@dataclass(frozen=True)
class DecisionRecord:
    t_ns: float
    task_id: int
    cpu: int
    slice_ns: float
    deadline: float
    policy: str
    reason: str

    def line(self) -> str:
        return f"{self.t_ns!r},{self.task_id},{self.cpu},{self.slice_ns!r},{self.deadline!r},{self.policy},{self.reason}"


DECISION_LOG_HEADER = "t_ns,task_id,cpu,slice_ns,deadline,policy,reason"


@dataclass(frozen=True)
class TaskStats:
    task_id: int
    workload: str
    thread_index: int
    read_bytes: int
    write_bytes: int
    vruntime: float
    exec_ns: float
    migrations: int
    switches: int
    final_cpu: int | None


@dataclass(frozen=True)
class ChannelStats:
    node_id: int
    instance: int
    read_bytes: int
    write_bytes: int
    turnarounds: int


@dataclass
class SimResult:
    horizon_ns: int
    end_ns: float
    policy: str
    # all bytes served, including the post-horizon drain
    node_bytes: dict[tuple[int, str], int]
    # bytes whose completion landed within the horizon
    node_bytes_in_horizon: dict[tuple[int, str], int]
    requests_in_horizon: int
    tasks: list[TaskStats]
    channels: list[ChannelStats]
    latencies_ns: np.ndarray
    samples: list[MetricSample]
    decisions: list[DecisionRecord]
    cax: CaxTree

    def node_gbps(self, node_id: int, direction: str) -> float:
        return self.node_bytes_in_horizon.get((node_id, direction), 0) / self.horizon_ns

    @property
    def read_bytes(self) -> int:
        return sum(v for (_, d), v in self.node_bytes.items() if d == "read")

    @property
    def write_bytes(self) -> int:
        return sum(v for (_, d), v in self.node_bytes.items() if d == "write")

    @property
    def total_bytes(self) -> int:
        return self.read_bytes + self.write_bytes

    @property
    def gbps_read(self) -> float:
        return sum(v for (_, d), v in self.node_bytes_in_horizon.items() if d == "read") / self.horizon_ns

    @property
    def gbps_write(self) -> float:
        return sum(v for (_, d), v in self.node_bytes_in_horizon.items() if d == "write") / self.horizon_ns

    @property
    def gbps_total(self) -> float:
        return self.gbps_read + self.gbps_write

    @property
    def iops(self) -> float:
        return self.requests_in_horizon / (self.horizon_ns * 1e-9)

    @property
    def turnarounds(self) -> int:
        return sum(c.turnarounds for c in self.channels)

    def latency_percentile(self, q: float) -> float:
        if not len(self.latencies_ns):
            return math.nan
        return float(np.percentile(self.latencies_ns, q))

    @property
    def p50_ns(self) -> float:
        return self.latency_percentile(50)

    @property
    def p99_ns(self) -> float:
        return self.latency_percentile(99)

    def latency_histogram(self, bins: int = 50):
        return np.histogram(self.latencies_ns, bins=bins)

    def decision_log(self) -> str:
        return "\n".join([DECISION_LOG_HEADER] + [d.line() for d in self.decisions]) + "\n"


_DIR_NAME = {Direction.READ: "read", Direction.WRITE: "write"}


class Simulator:
    def __init__(self, config: SimConfig, workloads: Sequence[WorkloadSpec], policy: Policy,
                 hints: HintTree | None = None,
                 policy_switch: tuple[float, Policy] | None = None):
        self.cfg = config
        self.workloads = list(workloads)
        self.policy = policy
        self.hints = hints or HintTree()
        self.policy_switch = policy_switch
        self._validate()

        self.events = EventQueue()
        self.now = 0.0
        self.cpus = [_Cpu(c, c // config.cpus_per_cluster, config.cpu_home_node(c)) for c in range(config.cpus)]
        self.channels: dict[tuple[int, int], _Channel] = {}
        for n in config.nodes:
            for inst in range(n.channels):
                st = ChannelState(seed=derive_seed(config.master_seed, "channel", n.node_id, inst))
                self.channels[(n.node_id, inst)] = _Channel(n.node_id, inst, n.channel, st)
        self.node_channels = {n.node_id: n.channels for n in config.nodes}
        self.balance_point = {n.node_id: optimal_read_ratio(n.channel) for n in config.nodes}

        self.tasks: dict[int, TaskControlBlock] = {}
        self.pending: dict[int, TaskControlBlock] = {}
        self.cax = CaxTree()
        self.samples: list[MetricSample] = []
        self.decisions: list[DecisionRecord] = []
        self.latencies: list[float] = []
        self.node_bytes: dict[tuple[int, str], int] = defaultdict(int)
        self.node_bytes_in_horizon: dict[tuple[int, str], int] = defaultdict(int)
        self.requests_in_horizon = 0
        self.active = 0
        self.busy_cpus = 0
        # set when a CPU frees up or a run queue gains an entry
        self._cpus_dirty = False
        self._acc_t = 0.0
        self._acc_active = 0.0
        self._acc_busy = 0.0
        self._period_start = 0.0
        self._period_bytes = [0, 0]
        self._cluster_bytes = [[0, 0] for _ in range(config.clusters)]
        self._last_node_bw: dict[tuple[int, str], float] = {}
        self._prev_node_bytes: dict[tuple[int, str], int] = {}
        self.sampler = SamplerState(config.sample_period_ns, config.min_sample_period_ns,
                                    config.max_sample_period_ns) if config.adaptive_sampling else None

    # -- setup ---------------------------------------------------------------

    def _validate(self) -> None:
        cfg = self.cfg
        nodes = {n.node_id: n for n in cfg.nodes}
        for w in self.workloads:
            node = nodes.get(w.target_node)
            if node is None:
                raise KeyError(f"workload {w.name!r} targets unknown node {w.target_node}")
            if node.capacity_bytes == 0:
                raise ValueError(f"workload {w.name!r} targets node {w.target_node} with zero capacity")
            if w.working_set_bytes > node.capacity_bytes:
                raise ValueError(f"workload {w.name!r} working set exceeds node {w.target_node} capacity")
            resolve_hint(self.hints, w.cgroup)

    def _spawn_all(self) -> None:
        cfg = self.cfg
        tid = 0
        for w in self.workloads:
            proc = self.cax.add_process(w.name)
            hint = resolve_hint(self.hints, w.cgroup)
            for i in range(w.num_threads):
                if w.arrival_ns < cfg.horizon_ns:
                    tcb = TaskControlBlock(
                        task_id=tid, workload=w, thread_index=i, weight=hint.weight, hint=hint,
                        cursor=make_cursor(w, i, tid, cfg.master_seed),
                        bucket=make_bucket(w, w.arrival_ns),
                        end_ns=w.arrival_ns + w.duration_ns,
                    )
                    tcb.thread_ctx = self.cax.add_thread(proc, f"{w.name}/{i}", thread_key=tid)
                    self.tasks[tid] = tcb
                    self.events.push(w.arrival_ns, EventKind.TASK_ARRIVE, tid)
                    if tcb.end_ns < cfg.horizon_ns:
                        self.events.push(tcb.end_ns, EventKind.TASK_END, tid)
                tid += 1

    # -- main loop -------------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.cfg
        self._spawn_all()
        period = self.sampler.current_period_ns if self.sampler else cfg.sample_period_ns
        if period <= cfg.horizon_ns:
            self.events.push(period, EventKind.SAMPLE_TICK, None)
        if self.policy_switch is not None:
            self.events.push(self.policy_switch[0], EventKind.POLICY_SWITCH, self.policy_switch[1])
        handlers = {
            EventKind.TASK_ARRIVE: self._on_arrive,
            EventKind.REQUEST_COMPLETE: self._on_complete,
            EventKind.TIME_SLICE_EXPIRE: self._on_slice_expire,
            EventKind.SAMPLE_TICK: self._on_sample,
            EventKind.CHANNEL_FREE: self._on_channel_free,
            EventKind.ISSUE_READY: self._on_issue_ready,
            EventKind.TASK_END: self._on_task_end,
            EventKind.POLICY_SWITCH: self._on_policy_switch,
        }
        horizon = cfg.horizon_ns
        heap = self.events._heap
        ev = self.events
        while heap:
            t = heap[0][0]
            if t < self.now:
                raise RuntimeError("event time went backwards")
            self.now = t
            if t <= horizon:
                self._advance(t)
            while heap and heap[0][0] == t:
                _, _, kind, payload = ev.pop()
                if t >= horizon and kind not in (EventKind.REQUEST_COMPLETE, EventKind.CHANNEL_FREE,
                                                 EventKind.SAMPLE_TICK):
                    continue
                handlers[kind](t, payload)
            if t < horizon:
                if self.pending:
                    self._schedule(t)
                if self._cpus_dirty:
                    self._start_cpus(t)
        return self._finish()

    def _advance(self, t: float) -> None:
        dt = t - self._acc_t
        if dt > 0:
            self._acc_active += self.active * dt
            self._acc_busy += self.busy_cpus * dt
            self._acc_t = t

    # -- handlers ------------------------------------------------------------

    def _on_arrive(self, t, tid):
        task = self.tasks[tid]
        task.next_issue_ns = t
        self.active += 1
        self.pending[tid] = task

    def _on_task_end(self, t, tid):
        task = self.tasks[tid]
        if task.state is TaskState.DONE:
            return
        if task.on_cpu:
            self._vacate(self.cpus[task.assigned_cpu], t)
        task.state = TaskState.DONE
        task.token += 1
        task.queued_cpu = None
        self.pending.pop(tid, None)
        self.active -= 1

    def _vacate(self, cpu: _Cpu, t: float) -> TaskControlBlock:
        task = cpu.current
        ran = t - task.run_start_ns
        task.exec_pending_ns += ran
        task.exec_total_ns += ran
        cpu.busy_ns += ran
        cpu.current = None
        self.busy_cpus -= 1
        self._cpus_dirty = True
        cpu.last_task = task
        cpu.slice_token += 1
        task.state = TaskState.RUNNABLE
        task.token += 1
        return task

    def _on_slice_expire(self, t, payload):
        cpu_id, token = payload
        cpu = self.cpus[cpu_id]
        if cpu.slice_token != token or cpu.current is None:
            return
        task = self._vacate(cpu, t)
        self.pending[task.task_id] = task

    def _on_issue_ready(self, t, payload):
        tid, token = payload
        task = self.tasks[tid]
        if task.token == token and task.on_cpu:
            self._pump(task, t)

    def _on_channel_free(self, t, chan: _Channel):
        if chan.wake_at == t:
            chan.wake_at = None
        self._service(chan, t)

    def _on_complete(self, t, req):
        task = self.tasks[req.task_id]
        size = req.size_bytes
        read = req.direction is Direction.READ
        key = (req.node_id, "read" if read else "write")
        if read:
            task.inflight_read -= 1
            task.read_bytes += size
            task.period_read += size
            self.cax.accrue(task.task_id, size, 0)
        else:
            task.inflight_write -= 1
            task.write_bytes += size
            task.period_write += size
            self.cax.accrue(task.task_id, 0, size)
        self.node_bytes[key] += size
        self.latencies.append(t - req.issue_time_ns)
        if t <= self.cfg.horizon_ns:
            self.node_bytes_in_horizon[key] += size
            self.requests_in_horizon += 1
            self._period_bytes[0 if read else 1] += size
            if task.assigned_cpu is not None:
                self._cluster_bytes[self.cpus[task.assigned_cpu].cluster][0 if read else 1] += size
            if task.on_cpu:
                self._pump(task, t)

    def _on_policy_switch(self, t, new_policy: Policy):
        new_policy.import_state(self.policy.export_state())
        self.policy = new_policy

    def _on_sample(self, t, _):
        cfg = self.cfg
        period = t - self._period_start
        running = self._acc_active / period
        util = min(1.0, self._acc_busy / (cfg.cpus * period))
        cluster_ratio = tuple(None if r + w == 0 else r / (r + w) for r, w in self._cluster_bytes)
        sample = MetricSample(t, running, util, self._period_bytes[0] / period,
                              self._period_bytes[1] / period, cluster_ratio)
        self.samples.append(sample)
        per_task = {}
        for task in self.tasks.values():
            if task.state is TaskState.DONE or t < task.workload.arrival_ns:
                continue
            rg, wg = task.period_read / period, task.period_write / period
            per_task[task.task_id] = (rg, wg)
            task.recent_gbps = rg + wg if rg + wg > 0 else task.recent_gbps
            task.period_read = task.period_write = 0
        self._last_node_bw = {k: (v - self._prev_node_bytes.get(k, 0)) / period
                              for k, v in self.node_bytes_in_horizon.items()}
        self._prev_node_bytes = dict(self.node_bytes_in_horizon)
        self.cax.flush_all(t)
        self.policy.update(Feedback(t, sample, per_task))

        self._period_start = t
        self._acc_active = self._acc_busy = 0.0
        self._period_bytes = [0, 0]
        self._cluster_bytes = [[0, 0] for _ in range(cfg.clusters)]
        nxt = cfg.sample_period_ns
        if self.sampler is not None:
            recent = [s.total_gbps for s in self.samples[-8:]]
            mean = sum(recent) / len(recent)
            vol = 0.0 if mean == 0 else float(np.std(recent)) / mean
            nxt = adapt_period(self.sampler, vol)
        if t + nxt <= cfg.horizon_ns:
            self.events.push(t + nxt, EventKind.SAMPLE_TICK, None)

    # -- requests --------------------------------------------------------------

    def _pump(self, task: TaskControlBlock, t: float) -> None:
        cfg = self.cfg
        if t >= cfg.horizon_ns:
            return
        spec = task.workload
        depth = cfg.inflight_depth
        think = cfg.think_time_ns
        cpu = self.cpus[task.assigned_cpu]
        chan = self.channels[(spec.target_node, cpu.cluster % self.node_channels[spec.target_node])]
        if cpu.home_node is None:
            distance = 1.0
        else:
            distance = cfg.distance_matrix[cfg.node_index(cpu.home_node)][cfg.node_index(spec.target_node)]
        issued = False
        while task.inflight < depth:
            if think > 0 and task.next_issue_ns > t:
                self.events.push(task.next_issue_ns, EventKind.ISSUE_READY, (task.task_id, task.token))
                break
            req = next_request(spec, task.cursor, task.bucket, t, distance)
            if req is None:
                wait = task.bucket.time_until(spec.block_size_bytes, t)
                if math.isfinite(wait):
                    self.events.push(t + max(math.ceil(wait), 1), EventKind.ISSUE_READY,
                                     (task.task_id, task.token))
                break
            chan.state.enqueue(req)
            if req.direction is Direction.READ:
                task.inflight_read += 1
            else:
                task.inflight_write += 1
            task.next_issue_ns = t + think
            issued = True
        task.state = TaskState.BLOCKED if task.inflight >= depth else TaskState.RUNNING
        if issued:
            self._service(chan, t)

    def _service(self, chan: _Channel, t: float) -> None:
        for s in serve(chan.state, chan.config, t):
            self.events.push(s.completion_ns, EventKind.REQUEST_COMPLETE, s.request)
        ns = chan.state.pending_start_ns
        if ns is not None and (chan.wake_at is None or ns < chan.wake_at):
            chan.wake_at = ns
            self.events.push(ns, EventKind.CHANNEL_FREE, chan)

    # -- scheduling ------------------------------------------------------------

    def _view(self, task: TaskControlBlock) -> TaskView:
        return TaskView(
            task_id=task.task_id, weight=task.weight, vruntime=task.vruntime,
            exec_ns=task.exec_pending_ns, prev_cpu=task.assigned_cpu, node=task.workload.target_node,
            declared_read_ratio=task.cursor.read_ratio, read_bytes=task.read_bytes,
            write_bytes=task.write_bytes, bandwidth_gbps=task.recent_gbps, hint=task.hint,
        )

    def _queued(self, cpu: _Cpu) -> list[TaskControlBlock]:
        out = []
        for _, _, gen, task in cpu.runqueue:
            if task.queued_cpu == cpu.cpu_id and task.dispatch_gen == gen and task.state is TaskState.RUNNABLE:
                out.append(task)
        return out

    def scheduler_state(self, t: float) -> SchedulerState:
        live = [x for x in self.tasks.values() if x.state is not TaskState.DONE and t >= x.workload.arrival_ns]
        views = {x.task_id: self._view(x) for x in live}
        cpu_tasks, rdepth, wdepth = [], [], []
        for cpu in self.cpus:
            members = ([cpu.current] if cpu.current is not None else []) + self._queued(cpu)
            cpu_tasks.append([m.task_id for m in members])
            rdepth.append(sum(m.inflight_read for m in members))
            wdepth.append(sum(m.inflight_write for m in members))
        p50 = p99 = None
        if self.latencies:
            recent = np.asarray(self.latencies[-4096:])
            p50, p99 = float(np.percentile(recent, 50)), float(np.percentile(recent, 99))
        return SchedulerState(
            now_ns=t, cpus=self.cfg.cpus, cpu_cluster=[c.cluster for c in self.cpus],
            runnable=[views[tid] for tid in self.pending],
            tasks=views, cpu_tasks=cpu_tasks, cpu_read_depth=rdepth, cpu_write_depth=wdepth,
            node_bandwidth=dict(self._last_node_bw), latency_p50_ns=p50, latency_p99_ns=p99,
            balance_point=dict(self.balance_point),
            mvruntime=min((x.vruntime for x in live), default=0.0),
            samples=self.samples,
        )

    def _schedule(self, t: float) -> None:
        state = self.scheduler_state(t)
        decisions: list[Dispatch] = self.policy.schedule(state)
        for d in decisions:
            task = self.pending.pop(d.task_id, None)
            if task is None:
                raise RuntimeError(f"policy dispatched task {d.task_id} which is not runnable")
            if not 0 <= d.cpu < self.cfg.cpus:
                raise RuntimeError(f"policy chose unknown cpu {d.cpu}")
            if not d.slice_ns > 0:
                raise RuntimeError("policy returned a non-positive slice")
            if d.vruntime < task.vruntime:
                raise RuntimeError(f"policy decreased vruntime of task {d.task_id}")
            task.vruntime = d.vruntime
            task.deadline = d.deadline
            task.slice_ns = d.slice_ns
            task.exec_pending_ns = 0.0
            task.dispatch_gen += 1
            task.queued_cpu = d.cpu
            heapq.heappush(self.cpus[d.cpu].runqueue, (d.key, d.task_id, task.dispatch_gen, task))
            self._cpus_dirty = True
            self.decisions.append(DecisionRecord(t, d.task_id, d.cpu, d.slice_ns, d.deadline,
                                                 self.policy.name, d.reason))

    def _pop_runqueue(self, cpu: _Cpu) -> TaskControlBlock | None:
        rq = cpu.runqueue
        while rq:
            _, _, gen, task = heapq.heappop(rq)
            if task.queued_cpu == cpu.cpu_id and task.dispatch_gen == gen and task.state is TaskState.RUNNABLE:
                task.queued_cpu = None
                return task
        return None

    def _start_cpus(self, t: float) -> None:
        # switch-outs first so a migrating task leaves its old CPU before
        # it is attributed on the new one
        self._cpus_dirty = False
        starts = []
        for cpu in self.cpus:
            if cpu.current is not None:
                continue
            nxt = self._pop_runqueue(cpu)
            prev = cpu.last_task
            if prev is not None and prev is not nxt:
                self._switch_out(cpu, prev, t)
            cpu.last_task = None
            if nxt is not None:
                starts.append((cpu, nxt, prev is nxt))
        for cpu, task, resumed in starts:
            self._switch_in(cpu, task, t, resumed)

    def context_switch(self, cpu: int, prev: TaskControlBlock | None, nxt: TaskControlBlock | None,
                       now: float) -> None:
        if prev is nxt:
            raise ValueError("prev and next must differ")
        c = self.cpus[cpu]
        if prev is not None:
            if c.current is prev:
                self._vacate(c, now)
                c.last_task = None
            self._switch_out(c, prev, now)
        if nxt is not None:
            self._switch_in(c, nxt, now, False)

    def _switch_out(self, cpu: _Cpu, task: TaskControlBlock, t: float) -> None:
        task.switches += 1
        while self.cax.stack(task.task_id):
            self.cax.exit_scope(task.task_id, t)
        self.cax.flush(task.task_id, t)

    def _switch_in(self, cpu: _Cpu, task: TaskControlBlock, t: float, resumed: bool) -> None:
        cpu.current = task
        self.busy_cpus += 1
        if task.assigned_cpu is not None and task.assigned_cpu != cpu.cpu_id:
            task.migrations += 1
        task.assigned_cpu = cpu.cpu_id
        task.state = TaskState.RUNNING
        task.run_start_ns = t
        task.slices += 1
        cpu.slice_token += 1
        self.events.push(t + task.slice_ns, EventKind.TIME_SLICE_EXPIRE, (cpu.cpu_id, cpu.slice_token))
        funcs = task.workload.functions
        if funcs:
            if self.cax.stack(task.task_id):
                self.cax.exit_scope(task.task_id, t)
            self.cax.enter_scope(task.task_id, funcs[(task.slices - 1) % len(funcs)], t)
        penalty = 0.0 if resumed else self.cfg.context_switch_ns
        if penalty > 0:
            self.events.push(t + penalty, EventKind.ISSUE_READY, (task.task_id, task.token))
        else:
            self._pump(task, t)

    # -- wrap-up ---------------------------------------------------------------

    def _finish(self) -> SimResult:
        t = self.now
        for cpu in self.cpus:
            if cpu.current is not None:
                self._vacate(cpu, min(t, self.cfg.horizon_ns))
            if cpu.last_task is not None:
                self._switch_out(cpu, cpu.last_task, t)
                cpu.last_task = None
        for task in self.tasks.values():
            while self.cax.stack(task.task_id):
                self.cax.exit_scope(task.task_id, t)
            task.state = TaskState.DONE
        self.cax.flush_all(t)
        return SimResult(
            horizon_ns=self.cfg.horizon_ns,
            end_ns=t,
            policy=self.policy.name,
            node_bytes=dict(self.node_bytes),
            node_bytes_in_horizon=dict(self.node_bytes_in_horizon),
            requests_in_horizon=self.requests_in_horizon,
            tasks=[TaskStats(x.task_id, x.workload.name, x.thread_index, x.read_bytes, x.write_bytes,
                             x.vruntime, x.exec_total_ns, x.migrations, x.switches, x.assigned_cpu)
                   for x in self.tasks.values()],
            channels=[ChannelStats(c.node_id, c.instance, c.state.cumulative_read_bytes,
                                   c.state.cumulative_write_bytes, c.state.turnaround_count)
                      for c in self.channels.values()],
            latencies_ns=np.asarray(self.latencies, dtype=float),
            samples=list(self.samples),
            decisions=list(self.decisions),
            cax=self.cax,
        )


def run(config: SimConfig, workloads: Sequence[WorkloadSpec], policy: Policy,
        hints: HintTree | None = None, policy_switch: tuple[float, Policy] | None = None) -> SimResult:
    return Simulator(config, workloads, policy, hints, policy_switch).run()
