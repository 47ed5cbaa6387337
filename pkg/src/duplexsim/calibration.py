"""Fit channel parameters to measured (read_ratio, GB/s) points."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .channel import ChannelConfig, ChannelMode, DEFAULT_REQUEST_BYTES, effective_bandwidth

MAX_REL_ERROR = 0.25


class CalibrationError(ValueError):
    def __init__(self, message: str, result: "CalibrationResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class CalibrationResult:
    config: ChannelConfig
    targets: tuple[tuple[float, float], ...]
    predicted: tuple[float, ...]

    @property
    def rel_errors(self) -> tuple[float, ...]:
        return tuple((p - y) / y for p, (_, y) in zip(self.predicted, self.targets))

    @property
    def max_rel_error(self) -> float:
        return max(abs(e) for e in self.rel_errors)

    @property
    def sse(self) -> float:
        return math.fsum(e * e for e in self.rel_errors)


def load_targets_csv(path: str | Path) -> list[tuple[float, float]]:
    """Read ``read_ratio,gbps`` rows; a header line is optional."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                out.append((float(row[0]), float(row[1])))
            except ValueError:
                if out:
                    raise
                continue  # header
    return out


def _validate(targets: Sequence[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    pts = tuple(sorted((float(r), float(y)) for r, y in targets))
    if len(pts) < 3:
        raise CalibrationError("need at least 3 target points")
    for r, y in pts:
        if not 0.0 <= r <= 1.0:
            raise CalibrationError(f"target read_ratio {r} outside [0, 1]")
        if y <= 0:
            raise CalibrationError(f"target bandwidth {y} must be positive")
    rs = [r for r, _ in pts]
    if rs[0] > 0.05 or rs[-1] < 0.95 or not any(0.35 <= r <= 0.65 for r in rs):
        raise CalibrationError("targets must span r=0, r~0.5 and r=1")
    return pts


def _sse(cfg: ChannelConfig, pts, request_bytes: int) -> float:
    total = 0.0
    for r, y in pts:
        e = (effective_bandwidth(cfg, r, request_bytes) - y) / y
        total += e * e
    return total


def calibrate(targets: Iterable[tuple[float, float]], mode: ChannelMode | str,
              base: ChannelConfig | None = None, *,
              request_bytes: int = DEFAULT_REQUEST_BYTES,
              in_order: bool = True,
              max_rel_error: float = MAX_REL_ERROR) -> CalibrationResult:
    """Least-squares (relative error) fit by coarse grid search plus a polish.

    Full duplex fits read/write lane capacities and, for in-order issue, an
    optional ingress limit.  Half duplex fits shared capacity and turnaround.
    ``efficiency``, ``batch_size`` and latency fields are copied from
    ``base``; efficiency is exactly degenerate with a common capacity scale
    so it is held fixed rather than searched.

    Raises :class:`CalibrationError` if any point misses by more than
    ``max_rel_error`` after fitting.
    """
    mode = ChannelMode(mode)
    pts = _validate(list(targets))
    if base is None:
        base = ChannelConfig(mode=mode)
    base = base.with_(mode=mode)
    eff = base.efficiency
    y0 = next(y for r, y in pts if r <= 0.05) / eff
    y1 = next(y for r, y in reversed(pts) if r >= 0.95) / eff
    ymax = max(y for _, y in pts) / eff

    if mode is ChannelMode.FULL_DUPLEX:
        def make(rc, wc, ing):
            return base.with_(read_capacity_gbps=float(rc), write_capacity_gbps=float(wc),
                              ingress_gbps=None if ing is None else float(ing), in_order_issue=in_order)
        scales = np.linspace(0.85, 1.25, 9)
        ingress = [None] + list(ymax * np.geomspace(1.0, 3.0, 12))
        best = None
        for sr, sw, ing in itertools.product(scales, scales, ingress):
            cfg = make(y1 * sr, y0 * sw, ing)
            f = _sse(cfg, pts, request_bytes)
            if best is None or f < best[0] - 1e-15:
                best = (f, cfg)
        f0, cfg0 = best
        if f0 > 1e-12:
            if cfg0.ingress_gbps is None:
                x0 = np.log([cfg0.read_capacity_gbps, cfg0.write_capacity_gbps])
                fn = lambda x: _sse(make(*np.exp(x), None), pts, request_bytes)
                res = minimize(fn, x0, method="Nelder-Mead",
                               options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 600})
                cand = make(*np.exp(res.x), None)
            else:
                x0 = np.log([cfg0.read_capacity_gbps, cfg0.write_capacity_gbps, cfg0.ingress_gbps])
                fn = lambda x: _sse(make(*np.exp(x)), pts, request_bytes)
                res = minimize(fn, x0, method="Nelder-Mead",
                               options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 900})
                cand = make(*np.exp(res.x))
            if _sse(cand, pts, request_bytes) < f0:
                cfg0 = cand
    else:
        def make(cap, ta):
            return base.with_(shared_capacity_gbps=float(cap), turnaround_ns=max(float(ta), 0.0))
        best = None
        for cap, ta in itertools.product(ymax * np.linspace(0.9, 1.3, 17), np.linspace(0.0, 60.0, 61)):
            cfg = make(cap, ta)
            f = _sse(cfg, pts, request_bytes)
            if best is None or f < best[0] - 1e-15:
                best = (f, cfg)
        f0, cfg0 = best
        if f0 > 1e-12:
            fn = lambda x: _sse(make(math.exp(x[0]), x[1]), pts, request_bytes)
            res = minimize(fn, [math.log(cfg0.shared_capacity_gbps), cfg0.turnaround_ns],
                           method="Nelder-Mead", options={"xatol": 1e-6, "fatol": 1e-12})
            cand = make(math.exp(res.x[0]), res.x[1])
            if _sse(cand, pts, request_bytes) < f0:
                cfg0 = cand

    result = CalibrationResult(
        config=cfg0, targets=pts,
        predicted=tuple(effective_bandwidth(cfg0, r, request_bytes) for r, _ in pts))
    if result.max_rel_error > max_rel_error:
        raise CalibrationError(
            f"model cannot fit targets: max relative error {result.max_rel_error:.1%}", result)
    return result
