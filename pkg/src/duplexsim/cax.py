"""Hierarchical bandwidth attribution (system > process > thread > function)
with per-thread shadow scope stacks and an adaptive sampling period."""
from __future__ import annotations

import bisect
import csv
import enum
import io
from dataclasses import dataclass, field


class ContextKind(enum.IntEnum):
    SYSTEM = 0
    PROCESS = 1
    THREAD = 2
    FUNCTION = 3


# allowed parent kinds per child kind
_PARENT_KINDS = {
    ContextKind.PROCESS: (ContextKind.SYSTEM,),
    ContextKind.THREAD: (ContextKind.PROCESS,),
    ContextKind.FUNCTION: (ContextKind.THREAD, ContextKind.FUNCTION),
}


@dataclass
class CaxContext:
    id: int
    kind: ContextKind
    parent_id: int | None
    label: str
    read_bytes: int = 0
    write_bytes: int = 0
    last_update_ns: float = 0.0
    # (t_ns, cumulative read, cumulative write) after each attribution
    history: list[tuple[float, int, int]] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class Snapshot:
    read_gbps: float
    write_gbps: float
    read_ratio: float


@dataclass
class _ThreadAcct:
    ctx_id: int
    stack: list[int] = field(default_factory=list)
    pending_read: int = 0
    pending_write: int = 0


class CaxTree:
    def __init__(self):
        self.contexts: list[CaxContext] = [CaxContext(0, ContextKind.SYSTEM, None, "system")]
        self._functions: dict[tuple[int, str], int] = {}
        self._threads: dict[int, _ThreadAcct] = {}

    @property
    def root(self) -> CaxContext:
        return self.contexts[0]

    def get(self, ctx_id: int) -> CaxContext:
        if not 0 <= ctx_id < len(self.contexts):
            raise KeyError(f"unknown context id {ctx_id}")
        return self.contexts[ctx_id]

    def _new(self, kind: ContextKind, parent_id: int, label: str) -> int:
        parent = self.get(parent_id)
        if parent.kind not in _PARENT_KINDS[kind]:
            raise ValueError(f"{kind.name} context cannot sit under {parent.kind.name}")
        ctx = CaxContext(len(self.contexts), kind, parent_id, label)
        self.contexts.append(ctx)
        return ctx.id

    def add_process(self, label: str) -> int:
        return self._new(ContextKind.PROCESS, 0, label)

    def add_thread(self, process_id: int, label: str, thread_key: int | None = None) -> int:
        cid = self._new(ContextKind.THREAD, process_id, label)
        if thread_key is not None:
            self._threads[thread_key] = _ThreadAcct(cid)
        return cid

    def function_context(self, parent_id: int, label: str) -> int:
        """Get or create the Function context ``label`` under ``parent_id``.

        Keyed by (parent, label): the same function reached through
        different callers keeps separate totals.
        """
        key = (parent_id, label)
        cid = self._functions.get(key)
        if cid is None:
            cid = self._new(ContextKind.FUNCTION, parent_id, label)
            self._functions[key] = cid
        return cid

    def children(self, ctx_id: int) -> list[CaxContext]:
        return [c for c in self.contexts if c.parent_id == ctx_id]

    # -- attribution -------------------------------------------------------

    def attribute(self, ctx_id: int, delta_read: int, delta_write: int, now_ns: float) -> None:
        if delta_read < 0 or delta_write < 0:
            raise ValueError("deltas must be >= 0")
        cid: int | None = ctx_id
        self.get(ctx_id)
        while cid is not None:
            c = self.contexts[cid]
            c.read_bytes += delta_read
            c.write_bytes += delta_write
            c.last_update_ns = now_ns
            if delta_read or delta_write:
                h = c.history
                if h and h[-1][0] == now_ns:
                    h[-1] = (now_ns, c.read_bytes, c.write_bytes)
                else:
                    h.append((now_ns, c.read_bytes, c.write_bytes))
            cid = c.parent_id

    def _acct(self, thread_key: int) -> _ThreadAcct:
        try:
            return self._threads[thread_key]
        except KeyError:
            raise KeyError(f"unknown thread {thread_key}") from None

    def accrue(self, thread_key: int, delta_read: int, delta_write: int) -> None:
        """Buffer bytes consumed by a thread until its next boundary."""
        a = self._acct(thread_key)
        a.pending_read += delta_read
        a.pending_write += delta_write

    def pending(self, thread_key: int) -> tuple[int, int]:
        a = self._acct(thread_key)
        return a.pending_read, a.pending_write

    def flush(self, thread_key: int, now_ns: float) -> tuple[int, int]:
        """Attribute buffered bytes to the thread's innermost scope.

        Zero deltas are dropped so idle switches leave no trace.
        """
        a = self._acct(thread_key)
        dr, dw = a.pending_read, a.pending_write
        if dr or dw:
            a.pending_read = a.pending_write = 0
            self.attribute(a.stack[-1] if a.stack else a.ctx_id, dr, dw, now_ns)
        return dr, dw

    def flush_all(self, now_ns: float) -> None:
        for key in self._threads:
            self.flush(key, now_ns)

    def enter_scope(self, thread_key: int, label: str, now_ns: float) -> int:
        self.flush(thread_key, now_ns)
        a = self._acct(thread_key)
        cid = self.function_context(a.stack[-1] if a.stack else a.ctx_id, label)
        a.stack.append(cid)
        return cid

    def exit_scope(self, thread_key: int, now_ns: float) -> int:
        a = self._acct(thread_key)
        if not a.stack:
            raise RuntimeError(f"exit_scope on empty stack for thread {thread_key}")
        self.flush(thread_key, now_ns)
        return a.stack.pop()

    def stack(self, thread_key: int) -> tuple[int, ...]:
        return tuple(self._acct(thread_key).stack)

    def unbalanced_threads(self) -> list[int]:
        return [k for k, a in self._threads.items() if a.stack]

    # -- queries -----------------------------------------------------------

    def _cum_at(self, ctx: CaxContext, t: float) -> tuple[int, int]:
        i = bisect.bisect_right(ctx.history, (t, float("inf"), float("inf")))
        if i == 0:
            return 0, 0
        _, r, w = ctx.history[i - 1]
        return r, w

    def snapshot(self, ctx_id: int, window_ns: float, now_ns: float | None = None) -> Snapshot:
        """Rates over ``(now - window, now]``; ``now`` defaults to the last update."""
        if not window_ns > 0:
            raise ValueError("window_ns must be > 0")
        ctx = self.get(ctx_id)
        now = ctx.last_update_ns if now_ns is None else now_ns
        r1, w1 = self._cum_at(ctx, now)
        r0, w0 = self._cum_at(ctx, now - window_ns)
        dr, dw = r1 - r0, w1 - w0
        ratio = 1.0 if dr + dw == 0 else dr / (dr + dw)
        return Snapshot(dr / window_ns, dw / window_ns, ratio)

    def rows(self) -> list[tuple[int, str, int | None, int, int]]:
        return [(c.id, c.kind.name.lower(), c.parent_id, c.read_bytes, c.write_bytes) for c in self.contexts]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "kind", "parent", "read_bytes", "write_bytes"])
        for cid, kind, parent, rb, wb in self.rows():
            w.writerow([cid, kind, "" if parent is None else parent, rb, wb])
        return buf.getvalue()


@dataclass
class SamplerState:
    current_period_ns: float = 1_000_000
    min_period_ns: float = 500_000
    max_period_ns: float = 8_000_000
    # consecutive calm ticks observed
    stability_score: int = 0
    calm_threshold: float = 0.05
    spike_threshold: float = 0.25

    def __post_init__(self):
        if not 0 < self.min_period_ns <= self.max_period_ns:
            raise ValueError("need 0 < min_period_ns <= max_period_ns")
        if not self.calm_threshold <= self.spike_threshold:
            raise ValueError("calm_threshold must be <= spike_threshold")
        self.current_period_ns = min(max(self.current_period_ns, self.min_period_ns), self.max_period_ns)


def adapt_period(sampler: SamplerState, volatility: float) -> float:
    """Halve the period on a volatility spike, double it when calm."""
    if volatility < 0:
        raise ValueError("volatility must be >= 0")
    p = sampler.current_period_ns
    if volatility >= sampler.spike_threshold:
        p /= 2
        sampler.stability_score = 0
    elif volatility <= sampler.calm_threshold:
        p *= 2
        sampler.stability_score += 1
    else:
        sampler.stability_score = 0
    sampler.current_period_ns = min(max(p, sampler.min_period_ns), sampler.max_period_ns)
    return sampler.current_period_ns
