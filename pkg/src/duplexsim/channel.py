"""Half-duplex and full-duplex memory channel models.

Two views of the same channel are provided:

* closed-form steady-state throughput (:func:`effective_bandwidth`), and
* an event-level queue server (:func:`service`) that the simulator drives.

Units: capacities in GB/s with 1 GB = 1e9 bytes, which is numerically the
same as bytes per nanosecond, so ``size_bytes / capacity_gbps`` is a
duration in ns.

Full-duplex channels come in two issue disciplines.  With independent
issue the read and write lanes drain their own FIFOs with no interaction.
With in-order issue the device accepts requests strictly in arrival order:
a request whose lane is still busy blocks everything behind it, and an
optional ingress stage (``ingress_gbps``) bounds the request acceptance
rate regardless of direction.  The in-order discipline produces a smooth
throughput peak at mixed ratios instead of the sharp ``min`` tent of the
independent model.
"""
from __future__ import annotations

import enum
import functools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._seeding import unit_hash

MIN_REQUEST_BYTES = 64
MAX_REQUEST_BYTES = 1 << 30
DEFAULT_REQUEST_BYTES = 4096


class Direction(enum.Enum):
    READ = "read"
    WRITE = "write"

    @property
    def opposite(self) -> "Direction":
        return Direction.WRITE if self is Direction.READ else Direction.READ


class Pattern(enum.Enum):
    SEQUENTIAL = "sequential"
    RANDOM = "random"


class ChannelMode(enum.Enum):
    HALF_DUPLEX = "half"
    FULL_DUPLEX = "full"


@dataclass(slots=True)
class MemoryRequest:
    id: int
    task_id: int
    direction: Direction
    size_bytes: int
    issue_time_ns: float
    node_id: int = 0
    pattern_tag: Pattern = Pattern.RANDOM
    offset: int = 0
    # NUMA distance multiplier applied to the base latency draw
    distance: float = 1.0

    def __post_init__(self):
        if not MIN_REQUEST_BYTES <= self.size_bytes <= MAX_REQUEST_BYTES:
            raise ValueError(f"size_bytes {self.size_bytes} outside [64, 2^30]")
        if self.issue_time_ns < 0:
            raise ValueError("issue_time_ns must be non-negative")


@dataclass(frozen=True)
class ChannelConfig:
    mode: ChannelMode
    read_capacity_gbps: float = 1.0
    write_capacity_gbps: float = 1.0
    shared_capacity_gbps: float = 1.0
    turnaround_ns: float = 0.0
    base_latency_ns_min: float = 0.0
    base_latency_ns_max: float = 0.0
    batch_size: int = 8
    efficiency: float = 1.0
    in_order_issue: bool = False
    ingress_gbps: float | None = None
    name: str = ""

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", ChannelMode(self.mode))
        for fname in ("read_capacity_gbps", "write_capacity_gbps", "shared_capacity_gbps"):
            if not getattr(self, fname) > 0:
                raise ValueError(f"{fname} must be > 0")
        if self.ingress_gbps is not None and not self.ingress_gbps > 0:
            raise ValueError("ingress_gbps must be > 0 when given")
        if self.turnaround_ns < 0:
            raise ValueError("turnaround_ns must be >= 0")
        if self.base_latency_ns_min < 0 or self.base_latency_ns_min > self.base_latency_ns_max:
            raise ValueError("need 0 <= base_latency_ns_min <= base_latency_ns_max")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")

    @property
    def is_full_duplex(self) -> bool:
        return self.mode is ChannelMode.FULL_DUPLEX

    def with_(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)


def turnaround_idle_ns(cycles: int, ns_per_cycle: float) -> float:
    if cycles < 0 or ns_per_cycle <= 0:
        raise ValueError("need cycles >= 0 and ns_per_cycle > 0")
    return cycles * ns_per_cycle


# ---------------------------------------------------------------------------
# closed form


def _check_ratio(read_ratio: float) -> float:
    r = float(read_ratio)
    if not 0.0 <= r <= 1.0 or math.isnan(r):
        raise ValueError(f"read_ratio {read_ratio!r} outside [0, 1]")
    return r


def effective_bandwidth(config: ChannelConfig, read_ratio: float,
                        request_bytes: int = DEFAULT_REQUEST_BYTES) -> float:
    """Steady-state throughput in GB/s of a saturated channel at a read mix.

    ``read_ratio`` is the byte fraction of reads.  ``request_bytes`` only
    matters for half-duplex channels, where it sets how many bytes a
    direction phase carries between turnarounds.

    Half duplex: phases of up to ``batch_size`` same-direction requests
    alternate while both queues are backlogged, so each minority-direction
    batch costs two switches.  Bytes moved per switch is therefore
    ``S = request_bytes * batch_size / (2 * min(r, 1 - r))`` and the
    turnaround idles the bus for ``turnaround_ns * capacity`` byte-times,
    giving ``capacity * S / (S + turnaround_ns * capacity)``.
    """
    r = _check_ratio(read_ratio)
    eff = config.efficiency
    if config.mode is ChannelMode.HALF_DUPLEX:
        cap = config.shared_capacity_gbps * eff
        minority = min(r, 1.0 - r)
        if minority == 0.0 or config.turnaround_ns == 0.0:
            return cap
        per_switch = request_bytes * config.batch_size / (2.0 * minority)
        overhead = config.turnaround_ns * cap
        return cap * per_switch / (per_switch + overhead)

    rc, wc = config.read_capacity_gbps, config.write_capacity_gbps
    if config.in_order_issue:
        ingress = config.ingress_gbps
        h = 0.0 if ingress is None else 1.0 / ingress
        return eff / _in_order_mean_step(r, 1.0 / rc, 1.0 / wc, h)
    if r == 1.0:
        tput = rc
    elif r == 0.0:
        tput = wc
    else:
        tput = min(rc / r, wc / (1.0 - r))
    if config.ingress_gbps is not None:
        tput = min(tput, config.ingress_gbps)
    return eff * tput


@functools.lru_cache(maxsize=65536)
def _in_order_mean_step(r: float, a: float, c: float, h: float, grid: int = 512) -> float:
    """Mean time between request starts under in-order issue (unit-size requests).

    Embedded Markov chain over request starts.  State ``(lane, v)``: the lane
    the current request started on and ``v``, the wait until the other lane
    may start (floored at the ingress gap ``h``).  Next request on the same
    lane advances by ``m = max(h, s_lane)``; on the other lane by ``v``.
    ``v`` is continuous, so it lives on a uniform grid over ``[h, max(a, c)]``
    and off-grid values split their mass linearly between neighbours.
    """
    if r == 1.0:
        return max(h, a)
    if r == 0.0:
        return max(h, c)
    top = max(a, c)
    if h >= top:
        return h
    v = np.linspace(h, top, grid)
    q = v[1] - v[0]
    service = (c, a)      # lane 0 = write, lane 1 = read
    p_same = (1.0 - r, r)
    rows, cols, vals = [], [], []
    step = np.empty(2 * grid)
    idx = np.arange(grid)
    for lane in (0, 1):
        s = service[lane]
        m = max(h, s)
        base = lane * grid
        step[base:base + grid] = p_same[lane] * m + (1.0 - p_same[lane]) * v
        for target_lane, nxt, prob in (
            (lane, v - m, p_same[lane]),
            (1 - lane, s - v, 1.0 - p_same[lane]),
        ):
            x = (np.clip(nxt, h, top) - h) / q
            lo = np.minimum(np.floor(x).astype(np.int64), grid - 1)
            frac = x - lo
            hi = np.minimum(lo + 1, grid - 1)
            tb = target_lane * grid
            rows += [base + idx, base + idx]
            cols += [tb + lo, tb + hi]
            vals += [prob * (1.0 - frac), prob * frac]
    n = 2 * grid
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    A = (P.T - sp.identity(n, format="csr")).tolil()
    A[0, :] = np.ones(n)
    b = np.zeros(n)
    b[0] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    return float(pi @ step)


@functools.lru_cache(maxsize=64)
def optimal_read_ratio(config: ChannelConfig, request_bytes: int = DEFAULT_REQUEST_BYTES) -> float:
    """Read ratio that maximises :func:`effective_bandwidth`.

    Half-duplex channels have no interior optimum; 0.5 is returned as a
    neutral balance target.
    """
    if config.mode is ChannelMode.HALF_DUPLEX:
        return 0.5
    rc, wc = config.read_capacity_gbps, config.write_capacity_gbps
    if not config.in_order_issue:
        return rc / (rc + wc)
    grid = np.linspace(0.0, 1.0, 101)
    vals = [effective_bandwidth(config, float(x), request_bytes) for x in grid]
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, 100)]
    # golden-section refine inside the bracketing cells
    g = (math.sqrt(5) - 1) / 2
    x1, x2 = hi - g * (hi - lo), lo + g * (hi - lo)
    f1 = effective_bandwidth(config, x1, request_bytes)
    f2 = effective_bandwidth(config, x2, request_bytes)
    for _ in range(30):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + g * (hi - lo)
            f2 = effective_bandwidth(config, x2, request_bytes)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - g * (hi - lo)
            f1 = effective_bandwidth(config, x1, request_bytes)
    return (lo + hi) / 2


# ---------------------------------------------------------------------------
# event level


@dataclass
class ChannelState:
    current_direction: Direction | None = None
    read_queue: deque = field(default_factory=deque)
    write_queue: deque = field(default_factory=deque)
    busy_until_read_ns: float = 0.0
    busy_until_write_ns: float = 0.0
    cumulative_read_bytes: int = 0
    cumulative_write_bytes: int = 0
    turnaround_count: int = 0
    batch_served: int = 0
    ingress_free_ns: float = 0.0
    seed: int = 0
    # start time of the next queued request as of the last serve() call
    pending_start_ns: float | None = None

    def enqueue(self, request: MemoryRequest) -> None:
        q = self.read_queue if request.direction is Direction.READ else self.write_queue
        q.append(request)

    @property
    def queued(self) -> int:
        return len(self.read_queue) + len(self.write_queue)

    @property
    def cumulative_bytes(self) -> int:
        return self.cumulative_read_bytes + self.cumulative_write_bytes


class Served(NamedTuple):
    request: MemoryRequest
    start_ns: float
    end_ns: float
    completion_ns: float


def _older(a: MemoryRequest, b: MemoryRequest) -> bool:
    return (a.issue_time_ns, a.id) <= (b.issue_time_ns, b.id)


def _pick(state: ChannelState, config: ChannelConfig):
    """Next request the channel would start, without committing it.

    Returns ``(request, start_ns, is_switch)`` or ``None`` when idle.
    """
    rq, wq = state.read_queue, state.write_queue
    if not rq and not wq:
        return None
    if config.mode is ChannelMode.HALF_DUPLEX:
        cur = state.current_direction
        if cur is None:
            d = Direction.READ if rq and (not wq or _older(rq[0], wq[0])) else Direction.WRITE
        else:
            own, other = (rq, wq) if cur is Direction.READ else (wq, rq)
            if own and (state.batch_served < config.batch_size or not other):
                d = cur
            else:
                d = cur.opposite
        req = (rq if d is Direction.READ else wq)[0]
        switch = cur is not None and d is not cur
        bus = state.busy_until_read_ns
        start = bus + config.turnaround_ns if switch else bus
        return req, max(start, req.issue_time_ns), switch

    if config.in_order_issue:
        req = rq[0] if rq and (not wq or _older(rq[0], wq[0])) else wq[0]
        lane = state.busy_until_read_ns if req.direction is Direction.READ else state.busy_until_write_ns
        return req, max(lane, state.ingress_free_ns, req.issue_time_ns), False

    best = None
    if rq:
        best = (max(state.busy_until_read_ns, rq[0].issue_time_ns), rq[0])
    if wq:
        s = max(state.busy_until_write_ns, wq[0].issue_time_ns)
        if best is None or s < best[0]:
            best = (s, wq[0])
    return best[1], best[0], False


def next_start_ns(state: ChannelState, config: ChannelConfig) -> float | None:
    picked = _pick(state, config)
    return None if picked is None else picked[1]


def serve(state: ChannelState, config: ChannelConfig, until_ns: float = math.inf) -> list[Served]:
    """Commit every queued request whose start time is ``<= until_ns``."""
    out = []
    eff = config.efficiency
    lat_lo = config.base_latency_ns_min
    lat_span = config.base_latency_ns_max - lat_lo
    half = config.mode is ChannelMode.HALF_DUPLEX
    while True:
        picked = _pick(state, config)
        if picked is None or picked[1] > until_ns:
            state.pending_start_ns = None if picked is None else picked[1]
            break
        req, start, switch = picked
        is_read = req.direction is Direction.READ
        (state.read_queue if is_read else state.write_queue).popleft()
        size = req.size_bytes
        if half:
            if switch:
                state.turnaround_count += 1
                state.batch_served = 0
            state.current_direction = req.direction
            state.batch_served += 1
            end = start + size / (config.shared_capacity_gbps * eff)
            state.busy_until_read_ns = state.busy_until_write_ns = end
        else:
            cap = config.read_capacity_gbps if is_read else config.write_capacity_gbps
            end = start + size / (cap * eff)
            if is_read:
                state.busy_until_read_ns = end
            else:
                state.busy_until_write_ns = end
            if config.in_order_issue:
                gap = 0.0 if config.ingress_gbps is None else size / (config.ingress_gbps * eff)
                state.ingress_free_ns = start + gap
        if is_read:
            state.cumulative_read_bytes += size
        else:
            state.cumulative_write_bytes += size
        latency = lat_lo
        if lat_span > 0:
            latency += lat_span * unit_hash(state.seed, req.id)
        out.append(Served(req, start, end, end + latency * req.distance))
    return out


def service(state: ChannelState, config: ChannelConfig, now_ns: float,
            until_ns: float | None = None) -> list[tuple[int, float]]:
    """Serve queued requests; returns ``(request_id, completion_ns)`` pairs.

    With ``until_ns`` omitted the queues are drained completely.  The
    simulator passes ``until_ns=now_ns`` so that only requests able to start
    by ``now`` are committed and later arrivals can still join a batch.
    """
    for q in (state.read_queue, state.write_queue):
        if q and q[-1].issue_time_ns > now_ns:
            raise ValueError("queue holds a request issued after now_ns")
    served = serve(state, config, math.inf if until_ns is None else until_ns)
    return [(s.request.id, s.completion_ns) for s in served]
