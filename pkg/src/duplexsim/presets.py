"""Channel, topology and workload presets.

Channel capacities below were produced by ``calibration.calibrate`` against
the measurement targets kept in ``CALIBRATION_TARGETS`` and then frozen, so
loading a preset never runs an optimiser.  ``tests/test_calibration.py``
re-fits the targets and checks the frozen numbers still agree.
"""
from __future__ import annotations

from .channel import ChannelConfig, ChannelMode, turnaround_idle_ns

# (read_ratio, GB/s) measurement targets, 64GB-buffer random access.
CALIBRATION_TARGETS = {
    # pure-read point is the pure-write figure over the 0.75 write/read ratio
    "cxl-512": [(0.0, 35.9), (0.55, 57.8), (1.0, 48.0)],
    "cxl-256": [(0.0, 22.2), (0.5, 34.4), (1.0, 22.2 / 0.93)],
    # flat 153-189 band; writes at 0.99x reads
    "ddr5": [(0.0, 189.0 * 0.99), (0.5, 153.0), (1.0, 189.0)],
}

# measured pure-write / pure-read throughput ratios
WRITE_READ_RATIO = {"cxl-512": 0.75, "cxl-256": 0.93, "ddr5": 0.99}

CXL_LATENCY_NS = (130.0, 200.0)
DDR_LATENCY_NS = (75.0, 85.0)
DDR5_TURNAROUND_CYCLES = (15, 20)
DDR5_NS_PER_CYCLE = 0.75

CXL_512 = ChannelConfig(
    mode=ChannelMode.FULL_DUPLEX,
    read_capacity_gbps=48.0,
    write_capacity_gbps=35.9,
    ingress_gbps=135.83,
    in_order_issue=True,
    base_latency_ns_min=CXL_LATENCY_NS[0],
    base_latency_ns_max=CXL_LATENCY_NS[1],
    name="cxl-512",
)

CXL_256 = ChannelConfig(
    mode=ChannelMode.FULL_DUPLEX,
    read_capacity_gbps=23.889,
    write_capacity_gbps=22.225,
    in_order_issue=True,
    base_latency_ns_min=CXL_LATENCY_NS[0],
    base_latency_ns_max=CXL_LATENCY_NS[1],
    name="cxl-256",
)

# Fitted turnaround lands at ~14.97 ns, i.e. the 20-cycle end of the
# 15-20 cycle range at 0.75 ns/cycle.
DDR5 = ChannelConfig(
    mode=ChannelMode.HALF_DUPLEX,
    shared_capacity_gbps=188.05,
    read_capacity_gbps=189.0,
    write_capacity_gbps=189.0 * 0.99,
    turnaround_ns=14.97,
    batch_size=3,
    base_latency_ns_min=DDR_LATENCY_NS[0],
    base_latency_ns_max=DDR_LATENCY_NS[1],
    name="ddr5",
)


def _scaled(cfg: ChannelConfig, factor: float, name: str) -> ChannelConfig:
    return cfg.with_(
        read_capacity_gbps=cfg.read_capacity_gbps * factor,
        write_capacity_gbps=cfg.write_capacity_gbps * factor,
        shared_capacity_gbps=cfg.shared_capacity_gbps * factor,
        ingress_gbps=None if cfg.ingress_gbps is None else cfg.ingress_gbps * factor,
        name=name,
    )


# 1GB-buffer capacity sets: same duplex shape, uniformly higher bandwidth
CHANNEL_PRESETS: dict[str, ChannelConfig] = {
    "ddr5": DDR5,
    "cxl-256": CXL_256,
    "cxl-512": CXL_512,
    "ddr5-1gb": _scaled(DDR5, 198.0 / 167.0, "ddr5-1gb"),
    "cxl-256-1gb": _scaled(CXL_256, 1.52, "cxl-256-1gb"),
    "cxl-512-1gb": _scaled(CXL_512, 74.5 / 48.6, "cxl-512-1gb"),
}


def channel_preset(name: str, extra: dict[str, ChannelConfig] | None = None) -> ChannelConfig:
    table = dict(CHANNEL_PRESETS)
    if extra:
        table.update(extra)
    try:
        return table[name]
    except KeyError:
        raise KeyError(f"unknown channel preset {name!r}; known: {sorted(table)}") from None


# local / cross-socket DDR5 (+20%) / CXL from CPU nodes (+40%) / inter-CXL (+60%)
DEFAULT_DISTANCE_MATRIX = [
    [1.0, 1.2, 1.4, 1.4],
    [1.2, 1.0, 1.4, 1.4],
    [1.4, 1.4, 1.0, 1.6],
    [1.4, 1.4, 1.6, 1.0],
]

GB = 10**9

# Node layout of the reference platform: (node_id, preset, capacity, has_cpus)
PLATFORM_NODES = [
    (0, "ddr5", 64 * GB, True),
    (1, "ddr5", 64 * GB, True),
    (2, "cxl-256", 256 * GB, False),
    (3, "cxl-512", 512 * GB, False),
]
PLATFORM_CPUS = 86

# Synthetic stand-ins for the application mixes (read ratio by bytes).
WORKLOAD_MIXES = {
    "microbench": 0.5,
    "redis-1-10": 10 / 11,   # SET:GET 1:10
    "redis-10-1": 1 / 11,    # SET:GET 10:1
    "llm-attention": 0.85,
    "llm-ffn": 0.60,
}


def ddr5_turnaround_range_ns() -> tuple[float, float]:
    lo, hi = DDR5_TURNAROUND_CYCLES
    return turnaround_idle_ns(lo, DDR5_NS_PER_CYCLE), turnaround_idle_ns(hi, DDR5_NS_PER_CYCLE)
