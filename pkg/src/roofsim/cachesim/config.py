"""Cache geometry, replacement-policy and access-kind definitions."""

import enum
from dataclasses import dataclass, field


class PolicyKind(enum.Enum):
    """Replacement policies selectable per cache level.

    TRUE_LRU        exact recency order.
    TREE_PLRU       binary tree of direction bits (works for any way count,
                    the tree splits ranges ceil/floor).
    STREAM_ONE_WAY  new lines are only allowed to displace the designated
                    way (way 0); invalid ways are filled first, so resident
                    data in the other ways is never preempted by a stream.
                    A line that gets a hit while sitting in way 0 is swapped
                    into a normal way chosen by tree-PLRU over ways 1..W-1.
    ADAPTIVE_DUELING  set dueling between TREE_PLRU and STREAM_ONE_WAY:
                    a few leader sets are pinned to each policy, a saturating
                    counter tallies leader misses, follower sets obey its sign.
    """

    TRUE_LRU = "true-lru"
    TREE_PLRU = "tree-plru"
    STREAM_ONE_WAY = "stream-one-way"
    ADAPTIVE_DUELING = "adaptive-dueling"


class InclusionMode(enum.Enum):
    """Organization of the last cache level.

    INCLUSIVE          every line in an inner level is also in the last level;
                       a last-level eviction back-invalidates inner copies.
    VICTIM_NONINCLUSIVE  the last level is filled by lines evicted from the
                       level above it, not by memory fills; a hit promotes the
                       line inward and invalidates the last-level copy.
    """

    INCLUSIVE = "inclusive"
    VICTIM_NONINCLUSIVE = "victim"


class AccessKind(enum.IntEnum):
    LOAD = 0
    STORE = 1        # write-allocate on miss
    STORE_NT = 2     # bypasses all levels, drains through write-combine buffers


class GeometryError(ValueError):
    """Raised for invalid cache geometry."""


@dataclass(frozen=True)
class CacheConfig:
    """Geometry and policy of one cache level."""

    level: str                 # "L1", "L2", "L3"
    capacity: int              # bytes
    ways: int
    line_size: int = 64
    inclusion: InclusionMode = InclusionMode.INCLUSIVE
    policy: PolicyKind = PolicyKind.TREE_PLRU
    allow_non_pow2_sets: bool = False
    # set-dueling knobs, only used by ADAPTIVE_DUELING
    dueling_leader_sets: int = 32
    dueling_counter_bits: int = 10

    def __post_init__(self):
        if self.capacity <= 0 or self.ways <= 0 or self.line_size <= 0:
            raise GeometryError(f"{self.level}: capacity/ways/line_size must be positive")
        if self.line_size & (self.line_size - 1):
            raise GeometryError(f"{self.level}: line size {self.line_size} is not a power of two")
        if self.capacity % (self.ways * self.line_size):
            raise GeometryError(
                f"{self.level}: capacity {self.capacity} not divisible by "
                f"ways*line_size = {self.ways * self.line_size}"
            )
        sets = self.sets
        if sets & (sets - 1) and not self.allow_non_pow2_sets:
            raise GeometryError(
                f"{self.level}: {sets} sets is not a power of two "
                f"(pass allow_non_pow2_sets=True if intentional)"
            )
        if self.dueling_counter_bits < 1 or self.dueling_counter_bits > 20:
            raise GeometryError(f"{self.level}: dueling_counter_bits out of range")

    @property
    def sets(self) -> int:
        return self.capacity // (self.ways * self.line_size)

    def scaled(self, divisor: int) -> "CacheConfig":
        """Same geometry with 1/divisor the sets (for desk-scale experiments)."""
        if divisor < 1 or self.sets % divisor:
            raise GeometryError(f"{self.level}: {self.sets} sets not divisible by {divisor}")
        return CacheConfig(
            level=self.level,
            capacity=self.capacity // divisor,
            ways=self.ways,
            line_size=self.line_size,
            inclusion=self.inclusion,
            policy=self.policy,
            allow_non_pow2_sets=True,
            dueling_leader_sets=min(self.dueling_leader_sets, max(1, self.sets // divisor // 2)),
            dueling_counter_bits=self.dueling_counter_bits,
        )

    def with_policy(self, policy: PolicyKind) -> "CacheConfig":
        return CacheConfig(
            level=self.level,
            capacity=self.capacity,
            ways=self.ways,
            line_size=self.line_size,
            inclusion=self.inclusion,
            policy=policy,
            allow_non_pow2_sets=True,
            dueling_leader_sets=self.dueling_leader_sets,
            dueling_counter_bits=self.dueling_counter_bits,
        )


def validate_hierarchy(configs) -> None:
    """Check that configs form a valid L1->LLC hierarchy."""
    if not configs:
        raise GeometryError("empty hierarchy")
    line = configs[0].line_size
    for c in configs:
        if c.line_size != line:
            raise GeometryError("all levels must share one line size")
    for inner, outer in zip(configs, configs[1:]):
        if outer.capacity <= inner.capacity:
            raise GeometryError(
                f"{outer.level} capacity {outer.capacity} not larger than "
                f"{inner.level} capacity {inner.capacity}"
            )
    for c in configs[:-1]:
        if c.inclusion is InclusionMode.VICTIM_NONINCLUSIVE:
            raise GeometryError("victim organization only applies to the last level")


KIB = 1024
MIB = 1024 * 1024


def clx_cache_configs(scale: int = 1) -> tuple:
    """Cascade Lake-like hierarchy: private L1/L2 plus the socket's shared
    non-inclusive victim L3 (20 x 1.375 MiB slices modeled as one cache,
    11 ways).  ``scale`` shrinks every level's set count for experiments
    whose working sets are desk-sized."""
    return (
        CacheConfig("L1", 32 * KIB, 8).scaled(scale),
        CacheConfig("L2", 1 * MIB, 16).scaled(scale),
        CacheConfig(
            "L3", 28_835_840, 11,  # 27.5 MiB
            inclusion=InclusionMode.VICTIM_NONINCLUSIVE,
            policy=PolicyKind.ADAPTIVE_DUELING,
            allow_non_pow2_sets=True,
        ).scaled(scale),
    )


def bdw_cache_configs(scale: int = 1) -> tuple:
    """Broadwell-like hierarchy: inclusive tree-PLRU L3 (18 x 2.5 MiB, 20 ways)."""
    return (
        CacheConfig("L1", 32 * KIB, 8).scaled(scale),
        CacheConfig("L2", 256 * KIB, 8).scaled(scale),
        CacheConfig(
            "L3", 47_185_920, 20,  # 45 MiB
            inclusion=InclusionMode.INCLUSIVE,
            policy=PolicyKind.TREE_PLRU,
            allow_non_pow2_sets=True,
        ).scaled(scale),
    )


def curve_cache_configs(policy: PolicyKind = PolicyKind.STREAM_ONE_WAY) -> tuple:
    """Small CLX-flavored hierarchy for replacement-policy studies: one
    1.375 MiB 11-way victim slice as the last level."""
    return (
        CacheConfig("L1", 8 * KIB, 8),
        CacheConfig("L2", 64 * KIB, 16),
        CacheConfig(
            "L3", 1_441_792, 11,  # 1.375 MiB = 2048 sets
            inclusion=InclusionMode.VICTIM_NONINCLUSIVE,
            policy=policy,
            allow_non_pow2_sets=True,
        ),
    )
