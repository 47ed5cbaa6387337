"""Synthetic read/write microbenchmark streams with token-bucket rate limiting."""
from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, replace
from typing import Sequence

from ._seeding import derive_seed
from .channel import Direction, MemoryRequest, Pattern
from .presets import WORKLOAD_MIXES

MAX_THREADS = 500
MIN_BLOCK = 4096
MAX_BLOCK = 1 << 20
DEFAULT_BURST_NS = 10_000_000  # 10 ms of tokens


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    num_threads: int = 1
    read_ratio: float = 0.5
    block_size_bytes: int = 4096
    pattern: Pattern = Pattern.RANDOM
    working_set_bytes: int = 1 << 30
    rate_limit_gbps: float | None = None
    target_node: int = 0
    duration_ns: int = 10**12
    # disjoint reader and writer thread pools instead of per-request mixing
    split_pools: bool = False
    cgroup: tuple[str, ...] = ("root",)
    # function scopes each thread enters once per time slice, round-robin
    functions: tuple[str, ...] = ()
    arrival_ns: int = 0

    def __post_init__(self):
        if isinstance(self.pattern, str):
            object.__setattr__(self, "pattern", Pattern(self.pattern))
        if isinstance(self.cgroup, (list, str)):
            path = self.cgroup.split("/") if isinstance(self.cgroup, str) else self.cgroup
            object.__setattr__(self, "cgroup", tuple(p for p in path if p))
        object.__setattr__(self, "functions", tuple(self.functions))
        if not 1 <= self.num_threads <= MAX_THREADS:
            raise ValueError(f"num_threads {self.num_threads} outside [1, {MAX_THREADS}]")
        if not 0.0 <= self.read_ratio <= 1.0:
            raise ValueError(f"read_ratio {self.read_ratio} outside [0, 1]")
        if not MIN_BLOCK <= self.block_size_bytes <= MAX_BLOCK:
            raise ValueError(f"block_size_bytes {self.block_size_bytes} outside [4KB, 1MB]")
        if self.working_set_bytes < self.block_size_bytes:
            raise ValueError("working_set_bytes must be >= block_size_bytes")
        if self.rate_limit_gbps is not None and not self.rate_limit_gbps > 0:
            raise ValueError("rate_limit_gbps must be > 0")
        if self.duration_ns <= 0:
            raise ValueError("duration_ns must be > 0")

    def readers(self) -> int:
        """Reader-pool size when ``split_pools`` is set (round half up)."""
        return int(math.floor(self.num_threads * self.read_ratio + 0.5))

    def thread_read_ratio(self, index: int) -> float:
        if not self.split_pools:
            return self.read_ratio
        return 1.0 if index < self.readers() else 0.0

    def with_(self, **changes) -> "WorkloadSpec":
        return replace(self, **changes)


@dataclass
class TokenBucket:
    capacity_bytes: int
    tokens: float
    refill_rate_bytes_per_ns: float
    last_refill_ns: float = 0.0

    @classmethod
    def for_rate(cls, gbps: float, burst_ns: float = DEFAULT_BURST_NS,
                 min_capacity: int = 0, start_full: bool = False, now_ns: float = 0.0) -> "TokenBucket":
        # GB/s == bytes/ns
        cap = max(int(gbps * burst_ns), min_capacity)
        return cls(cap, float(cap) if start_full else 0.0, float(gbps), now_ns)

    def refill(self, now_ns: float) -> None:
        if now_ns > self.last_refill_ns:
            self.tokens = min(float(self.capacity_bytes),
                              self.tokens + self.refill_rate_bytes_per_ns * (now_ns - self.last_refill_ns))
            self.last_refill_ns = now_ns

    def time_until(self, nbytes: int, now_ns: float) -> float:
        """Delay until ``nbytes`` tokens will be available (inf if never)."""
        if nbytes > self.capacity_bytes:
            return math.inf
        self.refill(now_ns)
        missing = nbytes - self.tokens
        return 0.0 if missing <= 0 else missing / self.refill_rate_bytes_per_ns


def try_consume(bucket: TokenBucket, nbytes: int, now_ns: float) -> bool:
    if nbytes <= 0:
        raise ValueError("nbytes must be > 0")
    bucket.refill(now_ns)
    if bucket.tokens >= nbytes:
        bucket.tokens -= nbytes
        return True
    return False


@dataclass
class ThreadCursor:
    thread_id: int
    read_ratio: float
    rng: random.Random
    next_offset: int = 0
    ops_issued_read: int = 0
    ops_issued_write: int = 0
    seq: int = 0

    @property
    def ops_issued(self) -> int:
        return self.ops_issued_read + self.ops_issued_write


def make_cursor(spec: WorkloadSpec, index: int, thread_id: int, seed: int) -> ThreadCursor:
    # not keyed by the workload name: sweep cells that differ only in a
    # parameter share per-thread random streams (common random numbers)
    rng = random.Random(derive_seed(seed, "cursor", thread_id))
    return ThreadCursor(thread_id=thread_id, read_ratio=spec.thread_read_ratio(index), rng=rng)


def make_bucket(spec: WorkloadSpec, now_ns: float = 0.0) -> TokenBucket | None:
    """Per-thread share of the workload's aggregate rate limit."""
    if spec.rate_limit_gbps is None:
        return None
    return TokenBucket.for_rate(spec.rate_limit_gbps / spec.num_threads,
                                min_capacity=spec.block_size_bytes, now_ns=now_ns)


def next_request(spec: WorkloadSpec, cursor: ThreadCursor, bucket: TokenBucket | None,
                 now_ns: float, distance: float = 1.0) -> MemoryRequest | None:
    """Emit the cursor's next request, or ``None`` if the bucket defers it.

    A deferred request leaves the cursor untouched, so the stream of
    directions and offsets does not depend on rate-limit timing.
    """
    block = spec.block_size_bytes
    if bucket is not None and not try_consume(bucket, block, now_ns):
        return None
    r = cursor.read_ratio
    rng = cursor.rng
    if r >= 1.0:
        direction = Direction.READ
    elif r <= 0.0:
        direction = Direction.WRITE
    else:
        direction = Direction.READ if rng.random() < r else Direction.WRITE
    slots = spec.working_set_bytes // block
    if spec.pattern is Pattern.SEQUENTIAL:
        offset = cursor.next_offset
        cursor.next_offset = (offset + block) % (slots * block)
    else:
        offset = rng.randrange(slots) * block
    if direction is Direction.READ:
        cursor.ops_issued_read += 1
    else:
        cursor.ops_issued_write += 1
    req = MemoryRequest(
        id=(cursor.thread_id << 32) | cursor.seq,
        task_id=cursor.thread_id,
        direction=direction,
        size_bytes=block,
        issue_time_ns=now_ns,
        node_id=spec.target_node,
        pattern_tag=spec.pattern,
        offset=offset,
        distance=distance,
    )
    cursor.seq += 1
    return req


STANDARD_RATIOS = tuple(i / 20 for i in range(21))
STANDARD_THREADS = (4, 16, 64, 172)


def build_sweep(base: WorkloadSpec, ratios: Sequence[float], thread_counts: Sequence[int],
                block_sizes: Sequence[int] | None = None) -> list[WorkloadSpec]:
    """Cartesian product of sweep axes, ratio-major, with derived names."""
    if not ratios or not thread_counts or (block_sizes is not None and not block_sizes):
        raise ValueError("sweep axes must be non-empty")
    blocks = list(block_sizes) if block_sizes is not None else [base.block_size_bytes]
    out = []
    for r, t, b in itertools.product(ratios, thread_counts, blocks):
        name = f"{base.name}-r{float(r):g}-t{int(t)}"
        if block_sizes is not None:
            name += f"-b{int(b)}"
        out.append(base.with_(name=name, read_ratio=float(r), num_threads=int(t), block_size_bytes=int(b)))
    return out


def workload_preset(name: str, **overrides) -> WorkloadSpec:
    try:
        ratio = WORKLOAD_MIXES[name]
    except KeyError:
        raise KeyError(f"unknown workload preset {name!r}; known: {sorted(WORKLOAD_MIXES)}") from None
    return WorkloadSpec(name=name, read_ratio=ratio).with_(**overrides)
