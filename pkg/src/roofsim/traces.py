"""Address traces: the stream-kernel generators and the binary trace format.

A trace is the address stream a straightforward scalar implementation of a
kernel would issue: one 8-byte access per scalar element (4-byte for CRS
index loads).  SIMD width changes instruction counts, not byte counts, so
traffic accounting is vectorization-agnostic.

Binary format: packed little-endian records of 8-byte address + 1-byte
access kind (0 load, 1 store, 2 non-temporal store), no header.
"""

import enum
from dataclasses import dataclass

import numpy as np

from ._accel import jit
from .cachesim.config import AccessKind

ELEM = 8  # bytes per double

TRACE_DTYPE = np.dtype([("addr", "<u8"), ("kind", "u1")])


class StreamKernelKind(enum.Enum):
    LOAD_ONLY = "load"       # s += a[i]
    COPY = "copy"            # a[i] = b[i]
    UPDATE = "update"        # a[i] = s * a[i]
    TRIAD = "triad"          # a[i] = b[i] + s * c[i]


@dataclass
class Trace:
    addrs: np.ndarray      # uint64 byte addresses
    kinds: np.ndarray      # uint8 AccessKind values
    work_count: int        # iterations / rows / nonzeros, caller-defined
    label: str = ""

    def __post_init__(self):
        self.addrs = np.ascontiguousarray(self.addrs, dtype=np.uint64)
        self.kinds = np.ascontiguousarray(self.kinds, dtype=np.uint8)
        if self.addrs.shape != self.kinds.shape:
            raise ValueError("addrs and kinds must have equal length")
        if self.work_count <= 0:
            raise ValueError("work_count must be positive")

    def __len__(self):
        return self.addrs.shape[0]

    def save(self, path):
        rec = np.empty(len(self), dtype=TRACE_DTYPE)
        rec["addr"] = self.addrs
        rec["kind"] = self.kinds
        rec.tofile(path)

    @classmethod
    def load(cls, path, work_count=None, label=""):
        rec = np.fromfile(path, dtype=TRACE_DTYPE)
        if rec.size == 0:
            raise ValueError(f"{path}: empty or unreadable trace file")
        return cls(rec["addr"].astype(np.uint64), rec["kind"].astype(np.uint8),
                   work_count=work_count or rec.size, label=label)


def _interleave(columns, kinds):
    """Per-iteration access tuples -> flat row-major streams."""
    n = columns[0].shape[0]
    k = len(columns)
    addrs = np.empty((n, k), dtype=np.uint64)
    for j, col in enumerate(columns):
        addrs[:, j] = col
    kind_arr = np.tile(np.asarray(kinds, dtype=np.uint8), n).reshape(n, k)
    return addrs.ravel(), kind_arr.ravel()


def default_stream_bases(n_elems: int, n_arrays: int, align: int = 64,
                         guard: int = 4096) -> tuple:
    """Line-aligned, non-overlapping base addresses for n_arrays of doubles."""
    span = (n_elems * ELEM + guard + align - 1) // align * align
    return tuple(align + i * span for i in range(n_arrays))


def _check_disjoint(bases, n_elems):
    spans = sorted((b, b + n_elems * ELEM) for b in bases)
    for (_, end), (start, _) in zip(spans, spans[1:]):
        if start < end:
            raise ValueError("stream arrays overlap")


def gen_stream_trace(kind: StreamKernelKind, n_elems: int, bases=None,
                     nt: bool = False) -> Trace:
    """Element-granularity trace of one streaming kernel pass.

    Per iteration: LOAD_ONLY loads a; COPY loads b, stores a; UPDATE loads
    and stores a (same address); TRIAD loads b and c, stores a (StoreNT
    when ``nt``).
    """
    kind = StreamKernelKind(kind)
    if n_elems <= 0:
        raise ValueError("n_elems must be positive")
    n_arrays = {StreamKernelKind.LOAD_ONLY: 1, StreamKernelKind.COPY: 2,
                StreamKernelKind.UPDATE: 1, StreamKernelKind.TRIAD: 3}[kind]
    if bases is None:
        bases = default_stream_bases(n_elems, n_arrays)
    if len(bases) != n_arrays:
        raise ValueError(f"{kind.value} needs {n_arrays} base addresses")
    if kind is not StreamKernelKind.UPDATE:
        _check_disjoint(bases, n_elems)
    idx = np.arange(n_elems, dtype=np.uint64) * ELEM
    store_kind = int(AccessKind.STORE_NT if nt else AccessKind.STORE)

    if kind is StreamKernelKind.LOAD_ONLY:
        a = bases[0] + idx
        addrs, kinds = _interleave([a], [AccessKind.LOAD])
    elif kind is StreamKernelKind.COPY:
        a, b = (base + idx for base in bases)
        addrs, kinds = _interleave([b, a], [AccessKind.LOAD, store_kind])
    elif kind is StreamKernelKind.UPDATE:
        a = bases[0] + idx
        addrs, kinds = _interleave([a, a], [AccessKind.LOAD, int(AccessKind.STORE)])
    else:  # TRIAD
        a, b, c = (base + idx for base in bases)
        addrs, kinds = _interleave([b, c, a],
                                   [AccessKind.LOAD, AccessKind.LOAD, store_kind])
    return Trace(addrs, kinds, work_count=n_elems,
                 label=f"{kind.value}{'-nt' if nt and kind is not StreamKernelKind.LOAD_ONLY else ''}")


# ---------------------------------------------------------------------------
# execute mode

@jit
def _triad_kernel(a, b, c, s):
    for i in range(a.shape[0]):
        a[i] = b[i] + s * c[i]


@jit
def _copy_kernel(a, b):
    for i in range(a.shape[0]):
        a[i] = b[i]


@jit
def _update_kernel(a, s):
    for i in range(a.shape[0]):
        a[i] = s * a[i]


@jit
def _load_kernel(a):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i]
    return s


# bytes/iteration under (cache-bypassing, write-allocate) interpretations
STREAM_BYTES_PER_ITER = {
    StreamKernelKind.LOAD_ONLY: (8, 8),
    StreamKernelKind.COPY: (16, 24),
    StreamKernelKind.UPDATE: (16, 16),
    StreamKernelKind.TRIAD: (24, 32),
}


def run_stream_kernel(kind: StreamKernelKind, arrays, s: float = 3.0) -> float:
    """One execute-mode pass; returns the load-only checksum (0.0 otherwise)."""
    kind = StreamKernelKind(kind)
    if kind is StreamKernelKind.LOAD_ONLY:
        return _load_kernel(arrays[0])
    if kind is StreamKernelKind.COPY:
        _copy_kernel(arrays[0], arrays[1])
    elif kind is StreamKernelKind.UPDATE:
        _update_kernel(arrays[0], s)
    else:
        _triad_kernel(arrays[0], arrays[1], arrays[2], s)
    return 0.0


def alloc_stream_arrays(kind: StreamKernelKind, n_elems: int):
    n_arrays = {StreamKernelKind.LOAD_ONLY: 1, StreamKernelKind.COPY: 2,
                StreamKernelKind.UPDATE: 1, StreamKernelKind.TRIAD: 3}[StreamKernelKind(kind)]
    return [np.full(n_elems, 1.0 + i, dtype=np.float64) for i in range(n_arrays)]


def gen_random_trace(n_accesses: int, footprint_bytes: int, store_fraction=0.0,
                     seed: int = 0, base: int = 64) -> Trace:
    """Uniform random accesses over a footprint (policy studies)."""
    if n_accesses <= 0 or footprint_bytes < ELEM:
        raise ValueError("need positive access count and footprint")
    rng = np.random.default_rng(seed)
    slots = max(1, footprint_bytes // ELEM)
    addrs = base + rng.integers(0, slots, size=n_accesses, dtype=np.uint64) * ELEM
    kinds = np.where(rng.random(n_accesses) < store_fraction,
                     np.uint8(AccessKind.STORE), np.uint8(AccessKind.LOAD))
    return Trace(addrs, kinds.astype(np.uint8), work_count=n_accesses, label="random")
