from .core import (
    POLICIES,
    BaselinePolicy,
    ColocatePolicy,
    Policy,
    SegregatePolicy,
    TimeSeriesPolicy,
    make_policy,
)
from .hints import DuplexMode, EffectiveHint, HintGroup, HintTree, resolve_hint
from .placement import PlacementBook, choose_cpu, cluster_scores, select_cpu, task_read_ratio
from .state import Dispatch, Feedback, SchedulerState, TaskView
from .timeseries import (
    MetricSample,
    SchedHint,
    SlidingWindow,
    Trend,
    Trends,
    calculate_deadline,
    calculate_time_slice,
    calculate_trends,
    detect_oversubscription,
    generate_scheduling_hint,
    slice_scale,
    update_sliding_window,
    update_vruntime,
)
