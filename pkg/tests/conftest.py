import pathlib

import numpy as np
import pytest

from roofsim.cachesim import CacheConfig, InclusionMode, PolicyKind

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture
def tiny_victim_configs():
    """Small CLX-flavored hierarchy for streams (caches << working sets)."""
    return (
        CacheConfig("L1", 2048, 8),
        CacheConfig("L2", 8192, 8),
        CacheConfig("L3", 32768, 8, inclusion=InclusionMode.VICTIM_NONINCLUSIVE),
    )


@pytest.fixture
def tiny_lru_configs():
    """Small all-true-LRU hierarchy, the organization the traffic bound assumes."""
    return (
        CacheConfig("L1", 1024, 4, policy=PolicyKind.TRUE_LRU),
        CacheConfig("L2", 4096, 8, policy=PolicyKind.TRUE_LRU),
        CacheConfig("L3", 16384, 8, inclusion=InclusionMode.VICTIM_NONINCLUSIVE,
                    policy=PolicyKind.TRUE_LRU),
    )


@pytest.fixture
def tiny_inclusive_configs():
    return (
        CacheConfig("L1", 1024, 4),
        CacheConfig("L2", 4096, 8),
        CacheConfig("L3", 16384, 8, inclusion=InclusionMode.INCLUSIVE),
    )


@pytest.fixture(scope="session")
def stencil64():
    from roofsim.sparse import stencil27_matrix
    return stencil27_matrix(64, 64, 64)


@pytest.fixture(scope="session")
def traffic64(stencil64):
    """Simulated per-kernel traffic of the 64^3 problem through CLX-preset
    caches shrunk 8x, preserving the working-set/cache ratio of the
    full-scale setup.  Shared across test modules (it is the slow part)."""
    from roofsim.cachesim import clx_cache_configs
    from roofsim.hpcg import KernelAccounting, measure_kernel_traffic

    acct = KernelAccounting()
    measure_kernel_traffic(stencil64, clx_cache_configs(scale=8), acct=acct)
    return acct


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
