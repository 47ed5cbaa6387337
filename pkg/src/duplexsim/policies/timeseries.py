"""Sliding-window metric analysis and the EEVDF-style bookkeeping used by the
time-series policy: EWMA trends, oversubscription detection, vruntime,
virtual deadlines and adaptive slices.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, fields

OVERSUB_THREADS_PER_CORE = 1.5
OVERSUB_UTILIZATION = 0.85
SLICE_SCALE_MIN = 0.25
SLICE_SCALE_MAX = 4.0


@dataclass(frozen=True)
class MetricSample:
    t_ns: float
    running_threads: float
    cpu_utilization: float
    read_gbps: float
    write_gbps: float
    cluster_read_ratio: tuple[float | None, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.cpu_utilization <= 1.0:
            raise ValueError("cpu_utilization outside [0, 1]")
        if self.read_gbps < 0 or self.write_gbps < 0:
            raise ValueError("bandwidth must be >= 0")

    @property
    def total_gbps(self) -> float:
        return self.read_gbps + self.write_gbps

    @property
    def read_ratio(self) -> float:
        tot = self.total_gbps
        return 1.0 if tot == 0 else self.read_gbps / tot


# metrics tracked per sample; each is an attribute/property of MetricSample
METRICS = ("running_threads", "cpu_utilization", "read_gbps", "write_gbps", "total_gbps", "read_ratio")


class SlidingWindow:
    """Last ``capacity`` samples plus an EWMA per metric.

    ``ewma_history`` keeps the EWMA value recorded right after each retained
    sample so trends can compare against the EWMA half a window back.
    """

    def __init__(self, capacity: int = 32, alpha: float = 0.25):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        self.capacity = capacity
        self.alpha = alpha
        self.samples: deque[MetricSample] = deque(maxlen=capacity)
        self.ewma: dict[str, float] = {}
        self.ewma_history: deque[dict[str, float]] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.samples)

    @property
    def last_t_ns(self) -> float | None:
        return self.samples[-1].t_ns if self.samples else None

    def mean(self, metric: str) -> float:
        return math.fsum(getattr(s, metric) for s in self.samples) / len(self.samples)

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "alpha": self.alpha,
            "samples": [
                {f.name: (list(getattr(s, f.name)) if f.name == "cluster_read_ratio" else getattr(s, f.name))
                 for f in fields(MetricSample)}
                for s in self.samples
            ],
            "ewma": dict(self.ewma),
            "ewma_history": [dict(h) for h in self.ewma_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlidingWindow":
        w = cls(d["capacity"], d["alpha"])
        for s in d["samples"]:
            s = dict(s)
            s["cluster_read_ratio"] = tuple(s.get("cluster_read_ratio", ()))
            w.samples.append(MetricSample(**s))
        w.ewma = dict(d["ewma"])
        w.ewma_history.extend(dict(h) for h in d["ewma_history"])
        return w


def update_sliding_window(window: SlidingWindow, sample: MetricSample) -> SlidingWindow:
    last = window.last_t_ns
    if last is not None and not sample.t_ns > last:
        raise ValueError(f"sample at {sample.t_ns} not after last sample at {last}")
    window.samples.append(sample)
    a = window.alpha
    for m in METRICS:
        x = getattr(sample, m)
        prev = window.ewma.get(m)
        window.ewma[m] = x if prev is None else a * x + (1 - a) * prev
    window.ewma_history.append(dict(window.ewma))
    return window


class Trend(enum.Enum):
    RISING = "rising"
    FALLING = "falling"
    FLAT = "flat"


@dataclass(frozen=True)
class Trends:
    direction: dict[str, Trend]
    volatility: dict[str, float]

    def __getitem__(self, metric: str) -> Trend:
        return self.direction[metric]


def _flat_trends() -> Trends:
    return Trends({m: Trend.FLAT for m in METRICS}, {m: 0.0 for m in METRICS})


def calculate_trends(window: SlidingWindow, epsilon: float = 0.05) -> Trends:
    """Classify each metric by current EWMA vs the EWMA half a window earlier.

    Changes within ``epsilon`` (relative) are Flat.  Volatility is the
    coefficient of variation (population std / mean) of raw samples in the
    window, 0 when the mean is 0.
    """
    n = len(window)
    if n < 2:
        return _flat_trends()
    earlier = window.ewma_history[n - 1 - n // 2]
    current = window.ewma_history[-1]
    direction, vol = {}, {}
    for m in METRICS:
        cur, old = current[m], earlier[m]
        diff = cur - old
        if abs(diff) <= epsilon * abs(old):
            direction[m] = Trend.FLAT
        else:
            direction[m] = Trend.RISING if diff > 0 else Trend.FALLING
        xs = [getattr(s, m) for s in window.samples]
        mean = math.fsum(xs) / n
        if mean == 0:
            vol[m] = 0.0
        else:
            var = math.fsum((x - mean) ** 2 for x in xs) / n
            vol[m] = math.sqrt(var) / abs(mean)
    return Trends(direction, vol)


def detect_oversubscription(window: SlidingWindow, cpus: int) -> bool:
    if not len(window):
        raise ValueError("need at least one sample")
    return (window.mean("running_threads") / cpus > OVERSUB_THREADS_PER_CORE
            and window.mean("cpu_utilization") > OVERSUB_UTILIZATION)


@dataclass(frozen=True)
class SchedHint:
    oversubscribed: bool = False
    trends: dict[str, Trend] = field(default_factory=dict)
    recommended_slice_scale: float = 1.0
    volatility: float = 0.0

    def __post_init__(self):
        if not SLICE_SCALE_MIN <= self.recommended_slice_scale <= SLICE_SCALE_MAX:
            raise ValueError("recommended_slice_scale outside [0.25, 4.0]")


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def slice_scale(oversubscribed: bool, volatility: float, bandwidth_trend: Trend = Trend.FLAT) -> float:
    """Oversubscribed: shrink by 1/(1+volatility), floored at 0.25.

    Otherwise grant a bonus of up to 2x while bandwidth is rising, damped by
    volatility; never below the base slice.
    """
    if volatility < 0:
        raise ValueError("volatility must be >= 0")
    if oversubscribed:
        return _clamp(1.0 / (1.0 + volatility), SLICE_SCALE_MIN, 1.0)
    bonus = (1.0 if bandwidth_trend is Trend.RISING else 0.0) / (1.0 + volatility)
    return _clamp(1.0 + bonus, 1.0, SLICE_SCALE_MAX)


def generate_scheduling_hint(oversubscribed: bool, trends: Trends, metric: str = "total_gbps") -> SchedHint:
    vol = trends.volatility.get(metric, 0.0)
    bw = trends.direction.get(metric, Trend.FLAT)
    return SchedHint(oversubscribed, dict(trends.direction), slice_scale(oversubscribed, vol, bw), vol)


def update_vruntime(task, mvruntime: float, exec_ns: float) -> float:
    """``max(task.vruntime, mvruntime) + exec_ns / task.weight`` (task not mutated)."""
    if exec_ns < 0:
        raise ValueError("exec_ns must be >= 0")
    if not task.weight > 0:
        raise ValueError("task weight must be > 0")
    return max(task.vruntime, mvruntime) + exec_ns / task.weight


def calculate_deadline(task, vruntime: float, hint: SchedHint, base_slice_ns: float) -> float:
    if not base_slice_ns > 0:
        raise ValueError("base_slice_ns must be > 0")
    return vruntime + base_slice_ns * hint.recommended_slice_scale / task.weight


def calculate_time_slice(hint: SchedHint, task, base_slice_ns: float) -> float:
    return base_slice_ns * hint.recommended_slice_scale
