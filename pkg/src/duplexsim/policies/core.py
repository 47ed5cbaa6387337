"""Scheduling policies: baseline, colocate, timeseries and a segregating control."""
from __future__ import annotations

import heapq
from collections import deque
from typing import Any

from .placement import DEFAULT_HYSTERESIS, PlacementBook
from .state import Dispatch, Feedback, SchedulerState, TaskView
from .timeseries import (
    SchedHint,
    SlidingWindow,
    calculate_deadline,
    calculate_time_slice,
    calculate_trends,
    detect_oversubscription,
    generate_scheduling_hint,
    update_sliding_window,
    update_vruntime,
)

DEFAULT_BASE_SLICE_NS = 1_000_000
_NEUTRAL = SchedHint()


class Policy:
    name = "policy"

    def __init__(self, params: dict[str, Any] | None = None):
        self.init(params or {})

    def init(self, params: dict[str, Any]) -> None:
        self.params = dict(params)
        self.base_slice_ns = float(params.get("base_slice_ns", DEFAULT_BASE_SLICE_NS))
        if not self.base_slice_ns > 0:
            raise ValueError("base_slice_ns must be > 0")
        self.vruntime: dict[int, float] = {}
        self.rr_next = 0
        self.feedback_history: deque[int] = deque(maxlen=int(params.get("feedback_history", 4096)))

    def schedule(self, state: SchedulerState) -> list[Dispatch]:
        raise NotImplementedError

    def update(self, feedback: Feedback) -> None:
        pass

    def notify_completion(self, queue_len: int) -> None:
        self.feedback_history.append(int(queue_len))

    # -- helpers -------------------------------------------------------

    def _charge(self, task: TaskView, mvruntime: float) -> float:
        # task.vruntime already mirrors what this policy last returned
        v = update_vruntime(task, mvruntime, task.exec_ns)
        self.vruntime[task.task_id] = v
        return v

    def _round_robin(self, state: SchedulerState) -> int:
        cpu = self.rr_next % state.cpus
        self.rr_next = cpu + 1
        return cpu

    # -- state migration -------------------------------------------------

    def export_state(self) -> dict[str, Any]:
        return {
            "policy": self.name,
            "vruntime": sorted(self.vruntime.items()),
            "rr_next": self.rr_next,
            "feedback_history": list(self.feedback_history),
        }

    def import_state(self, data: dict[str, Any]) -> None:
        """Accepts state exported by any policy; unknown keys are ignored."""
        self.vruntime = {int(k): float(v) for k, v in data.get("vruntime", [])}
        self.rr_next = int(data.get("rr_next", 0))
        self.feedback_history.clear()
        self.feedback_history.extend(data.get("feedback_history", []))


class BaselinePolicy(Policy):
    """Duplex-blind: vruntime order, round-robin CPUs for new tasks."""
    name = "baseline"

    def schedule(self, state):
        out = []
        for task in state.runnable:
            v = self._charge(task, state.mvruntime)
            cpu = task.prev_cpu if task.prev_cpu is not None else self._round_robin(state)
            d = calculate_deadline(task, v, _NEUTRAL, self.base_slice_ns)
            out.append(Dispatch(task.task_id, cpu, self.base_slice_ns, v, d, v, "rr" if task.prev_cpu is None else "prev"))
        out.sort(key=lambda x: (x.key, x.task_id))
        return out


class ColocatePolicy(Policy):
    """Baseline ordering with duplex-aware placement."""
    name = "colocate"

    def init(self, params):
        super().init(params)
        self.hysteresis = float(params.get("hysteresis", DEFAULT_HYSTERESIS))

    def schedule(self, state):
        book = PlacementBook.from_state(state)
        charged = sorted(((self._charge(t, state.mvruntime), t.task_id, t) for t in state.runnable),
                         key=lambda x: (x[0], x[1]))
        out = []
        for v, tid, task in charged:
            cpu, why = book.choose(task, state.balance_point.get(task.node, 0.5), self.hysteresis)
            book.add(task, cpu)
            d = calculate_deadline(task, v, _NEUTRAL, self.base_slice_ns)
            out.append(Dispatch(tid, cpu, self.base_slice_ns, v, d, v, why))
        return out


class TimeSeriesPolicy(Policy):
    """Window/trend analysis, oversubscription-aware slices, EDF dispatch
    over virtual deadlines and duplex-aware placement, in that order."""
    name = "timeseries"

    def init(self, params):
        super().init(params)
        self.hysteresis = float(params.get("hysteresis", DEFAULT_HYSTERESIS))
        self.epsilon = float(params.get("epsilon", 0.05))
        self.window = SlidingWindow(int(params.get("window", 32)), float(params.get("alpha", 0.25)))
        self.hint = _NEUTRAL

    def _ingest(self, state: SchedulerState) -> None:
        last = self.window.last_t_ns
        for s in state.samples[-self.window.capacity:]:
            if last is None or s.t_ns > last:
                update_sliding_window(self.window, s)
                last = s.t_ns

    def update(self, feedback):
        last = self.window.last_t_ns
        if last is None or feedback.sample.t_ns > last:
            update_sliding_window(self.window, feedback.sample)

    def schedule(self, state):
        # phase 1: metrics -> window -> trends
        self._ingest(state)
        trends = calculate_trends(self.window, self.epsilon)
        # phase 2: oversubscription -> hint
        oversub = detect_oversubscription(self.window, state.cpus) if len(self.window) else False
        self.hint = hint = generate_scheduling_hint(oversub, trends)
        # phase 3: vruntime and virtual deadline into a priority queue
        heap = []
        for task in state.runnable:
            v = self._charge(task, state.mvruntime)
            heapq.heappush(heap, (calculate_deadline(task, v, hint, self.base_slice_ns), task.task_id, v, task))
        # phase 4: EDF dispatch with adaptive slice and duplex placement
        book = PlacementBook.from_state(state)
        out = []
        while heap:
            d, tid, v, task = heapq.heappop(heap)
            slice_ns = calculate_time_slice(hint, task, self.base_slice_ns)
            cpu, why = book.choose(task, state.balance_point.get(task.node, 0.5), self.hysteresis)
            book.add(task, cpu)
            out.append(Dispatch(tid, cpu, slice_ns, d, d, v, why + ("+oversub" if oversub else "")))
        self.notify_completion(sum(max(0, n - 1) for n in book.cpu_load))
        return out

    def export_state(self):
        data = super().export_state()
        data["window"] = self.window.to_dict()
        return data

    def import_state(self, data):
        super().import_state(data)
        if "window" in data:
            self.window = SlidingWindow.from_dict(data["window"])


class SegregatePolicy(Policy):
    """Control placement: readers on the lower half of clusters, writers on
    the upper half, so each direction feeds its own channel instances."""
    name = "segregate"

    def schedule(self, state):
        nclu = state.clusters
        load = [len(x) for x in state.cpu_tasks]
        out = []
        for task in sorted(state.runnable, key=lambda t: t.task_id):
            v = self._charge(task, state.mvruntime)
            reader = task.declared_read_ratio >= 0.5
            half = max(1, nclu // 2)
            group = range(0, half) if reader or nclu == 1 else range(half, nclu)
            cpus = [c for c, k in enumerate(state.cpu_cluster) if k in group]
            if task.prev_cpu in cpus:
                cpu = task.prev_cpu
            else:
                cpu = min(cpus, key=lambda c: (load[c], c))
            load[cpu] += 1
            d = calculate_deadline(task, v, _NEUTRAL, self.base_slice_ns)
            out.append(Dispatch(task.task_id, cpu, self.base_slice_ns, v, d, v, "reader" if reader else "writer"))
        out.sort(key=lambda x: (x.key, x.task_id))
        return out


POLICIES: dict[str, type[Policy]] = {
    p.name: p for p in (BaselinePolicy, ColocatePolicy, TimeSeriesPolicy, SegregatePolicy)
}


def make_policy(name: str, params: dict[str, Any] | None = None) -> Policy:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise KeyError(f"unknown policy {name!r}; known: {sorted(POLICIES)}") from None
    return cls(params)
