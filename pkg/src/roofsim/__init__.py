"""roofsim: analytic roofline/code-balance performance models plus a
trace-driven multi-level cache simulator for streaming and sparse kernels."""

from .machine import (
    CompositePrediction,
    KernelKind,
    KernelModel,
    MachineModel,
    ModelError,
    RooflinePrediction,
    ScalingSeries,
    bandwidth_from_bytes_per_cycle,
    code_balance,
    crs_footprint,
    get_machine,
    hpcg_composite,
    hpcg_kernel_models,
    parallel_efficiency,
    peak_flops,
    roofline_perf,
    stream_corrected_bandwidth,
)

__version__ = "0.1.0"
