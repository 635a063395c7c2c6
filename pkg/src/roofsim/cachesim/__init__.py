from .config import (
    AccessKind,
    CacheConfig,
    GeometryError,
    InclusionMode,
    PolicyKind,
    bdw_cache_configs,
    clx_cache_configs,
    curve_cache_configs,
    validate_hierarchy,
)
from .engine import CacheHierarchy, build_hierarchy, hit_rate_curve, run_trace
from .report import TrafficReport

__all__ = [
    "AccessKind",
    "CacheConfig",
    "CacheHierarchy",
    "GeometryError",
    "InclusionMode",
    "PolicyKind",
    "TrafficReport",
    "bdw_cache_configs",
    "build_hierarchy",
    "clx_cache_configs",
    "curve_cache_configs",
    "hit_rate_curve",
    "run_trace",
    "validate_hierarchy",
]
