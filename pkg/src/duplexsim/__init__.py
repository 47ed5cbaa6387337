"""Discrete-event simulator for half- and full-duplex memory channels with
duplex-aware CPU scheduling policies."""
from .channel import (
    ChannelConfig,
    ChannelMode,
    ChannelState,
    Direction,
    MemoryRequest,
    Pattern,
    effective_bandwidth,
    optimal_read_ratio,
    service,
)
from .engine import NodeConfig, SimConfig, SimResult, Simulator, run
from .policies import make_policy
from .presets import CHANNEL_PRESETS, channel_preset
from .workload import WorkloadSpec

__version__ = "0.1.0"
