"""Duplex-aware CPU selection.

Clusters are scored by how close their prospective aggregate read ratio
(existing traffic plus the candidate task) lands to the channel's balance
point.  Traffic is summarised per cluster as (read GB/s, write GB/s).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .hints import DuplexMode, EffectiveHint
from .state import SchedulerState, TaskView

DEFAULT_HYSTERESIS = 0.05
DEFAULT_TRAFFIC_GBPS = 1.0
_TIE = 1e-12


def task_read_ratio(task: TaskView, hint: EffectiveHint) -> float:
    """Hints win under On; Auto prefers what was observed."""
    if hint.duplex_scheduling is DuplexMode.ON:
        return hint.expected_read_ratio
    obs = task.observed_read_ratio
    return hint.expected_read_ratio if obs is None else obs


def prospective_ratio(read: float, write: float, task_ratio: float, task_traffic: float) -> float:
    r = read + task_ratio * task_traffic
    tot = read + write + task_traffic
    return 1.0 if tot <= 0 else r / tot


def cluster_scores(task_ratio: float, task_traffic: float,
                   cluster_traffic: Sequence[tuple[float, float]], target: float) -> list[float]:
    return [abs(prospective_ratio(r, w, task_ratio, task_traffic) - target) for r, w in cluster_traffic]


def _least_loaded(cpus: Sequence[int], cpu_load: Sequence[int], prefer: int | None = None) -> int:
    best = min(cpu_load[c] for c in cpus)
    if prefer is not None and prefer in cpus and cpu_load[prefer] == best:
        return prefer
    return min(c for c in cpus if cpu_load[c] == best)


def choose_cpu(task_ratio: float, task_traffic: float,
               cluster_traffic: Sequence[tuple[float, float]],
               cpu_load: Sequence[int], cpu_cluster: Sequence[int],
               prev_cpu: int | None = None, *, target: float = 0.5,
               delta: float = DEFAULT_HYSTERESIS,
               duplex: DuplexMode = DuplexMode.AUTO) -> tuple[int, str]:
    """Pick a CPU; returns ``(cpu, reason)``.

    ``cpu_load`` and ``cluster_traffic`` must exclude the task being placed.
    Only clusters below their fair share of tasks are candidates, so
    co-location never stacks work on one cluster while another idles.
    """
    ncpu = len(cpu_cluster)
    if ncpu == 0:
        raise ValueError("no CPUs available")
    if duplex is DuplexMode.OFF:
        return _least_loaded(range(ncpu), cpu_load, prev_cpu), "least-loaded"
    if task_traffic <= 0:
        raise ValueError("task traffic estimate must be > 0")

    nclu = len(cluster_traffic)
    members: list[list[int]] = [[] for _ in range(nclu)]
    for c, k in enumerate(cpu_cluster):
        members[k].append(c)
    load = [sum(cpu_load[c] for c in m) for m in members]
    fair = math.ceil((sum(load) + 1) / nclu)
    cand = [k for k in range(nclu) if members[k] and load[k] < max(len(members[k]), fair)]

    scores = cluster_scores(task_ratio, task_traffic, cluster_traffic, target)
    best = min(cand, key=lambda k: (scores[k], load[k], k))
    # absorb float noise so equal scores fall through to the load tie-break
    ties = [k for k in cand if scores[k] <= scores[best] + _TIE]
    best = min(ties, key=lambda k: (load[k], k))

    if prev_cpu is not None:
        inc = cpu_cluster[prev_cpu]
        if inc in cand and scores[inc] - scores[best] < delta - _TIE:
            m = members[inc]
            if cpu_load[prev_cpu] <= min(cpu_load[c] for c in m):
                return prev_cpu, "hysteresis"
            return _least_loaded(m, cpu_load), "hysteresis"
    return _least_loaded(members[best], cpu_load, prev_cpu), "duplex-score"


@dataclass
class PlacementBook:
    """Mutable per-call view of CPU load and cluster traffic.

    Policies place several tasks per ``schedule`` call; the book is updated
    after each placement so later choices see earlier ones.
    """
    cpu_cluster: list[int]
    cpu_load: list[int]
    cluster_traffic: list[list[float]]
    estimates: dict[int, tuple[float, float]] = field(default_factory=dict)
    location: dict[int, int] = field(default_factory=dict)
    default_traffic: float = DEFAULT_TRAFFIC_GBPS

    @classmethod
    def from_state(cls, state: SchedulerState) -> "PlacementBook":
        known = [t.bandwidth_gbps for t in state.tasks.values() if t.bandwidth_gbps]
        default = math.fsum(known) / len(known) if known else DEFAULT_TRAFFIC_GBPS
        book = cls(list(state.cpu_cluster), [0] * state.cpus,
                   [[0.0, 0.0] for _ in range(state.clusters)], default_traffic=default)
        for cpu, tids in enumerate(state.cpu_tasks):
            for tid in tids:
                book.add(state.tasks[tid], cpu)
        return book

    def traffic(self, task: TaskView) -> float:
        return task.bandwidth_gbps if task.bandwidth_gbps else self.default_traffic

    def add(self, task: TaskView, cpu: int) -> None:
        t = self.traffic(task)
        rho = task_read_ratio(task, task.hint)
        est = (t * rho, t * (1.0 - rho))
        self.remove(task.task_id)
        k = self.cpu_cluster[cpu]
        self.cluster_traffic[k][0] += est[0]
        self.cluster_traffic[k][1] += est[1]
        self.cpu_load[cpu] += 1
        self.estimates[task.task_id] = est
        self.location[task.task_id] = cpu

    def remove(self, task_id: int) -> None:
        cpu = self.location.pop(task_id, None)
        if cpu is None:
            return
        r, w = self.estimates.pop(task_id)
        k = self.cpu_cluster[cpu]
        self.cluster_traffic[k][0] -= r
        self.cluster_traffic[k][1] -= w
        self.cpu_load[cpu] -= 1

    def choose(self, task: TaskView, target: float, delta: float = DEFAULT_HYSTERESIS) -> tuple[int, str]:
        self.remove(task.task_id)
        return choose_cpu(task_read_ratio(task, task.hint), self.traffic(task),
                          [tuple(x) for x in self.cluster_traffic], self.cpu_load, self.cpu_cluster,
                          task.prev_cpu, target=target, delta=delta,
                          duplex=task.hint.duplex_scheduling)


def select_cpu(task: TaskView, state: SchedulerState, hint_resolved: EffectiveHint | None = None,
               delta: float = DEFAULT_HYSTERESIS) -> int:
    """Single-task convenience wrapper over :class:`PlacementBook`."""
    if hint_resolved is not None and hint_resolved != task.hint:
        task = TaskView(**{**task.__dict__, "hint": hint_resolved})
    book = PlacementBook.from_state(state)
    target = state.balance_point.get(task.node, 0.5)
    return book.choose(task, target, delta)[0]
