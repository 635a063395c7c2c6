"""CRS sparse matrices and the sparse reference kernels.

Matrices are stored in compressed row storage with 8-byte values and 4-byte
column indices / row pointers, the layout all code-balance formulas assume.
Kernels run in execute mode (numba-compiled numerics) and in trace mode
(emit the address stream of a straightforward scalar implementation, with
x-vector gathers at the real col_idx targets so cache simulation sees the
true locality).
"""

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse
import scipy.sparse.csgraph

from ._accel import jit
from .cachesim.config import AccessKind
from .traces import ELEM, Trace


class MatrixMarketError(ValueError):
    """Malformed or unsupported MatrixMarket input."""


IDX = 4  # bytes per column index / row pointer


@dataclass
class SparseMatrixCRS:
    n_rows: int
    n_cols: int
    values: np.ndarray    # float64 [n_nz]
    col_idx: np.ndarray   # int32   [n_nz]
    row_ptr: np.ndarray   # int32   [n_rows + 1]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int32)
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int32)
        self.validate()

    def validate(self):
        rp = self.row_ptr
        if rp.shape[0] != self.n_rows + 1 or rp[0] != 0 or rp[-1] != len(self.values):
            raise ValueError("row_ptr endpoints inconsistent with matrix shape")
        if np.any(np.diff(rp) < 0):
            raise ValueError("row_ptr must be monotone non-decreasing")
        if len(self.col_idx) != len(self.values):
            raise ValueError("col_idx and values must have equal length")
        if self.n_nz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ValueError("column index out of range")
            same_row = np.repeat(np.arange(self.n_rows), np.diff(rp))
            interior = same_row[1:] == same_row[:-1]
            if np.any(np.diff(self.col_idx.astype(np.int64))[interior] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")

    @property
    def n_nz(self) -> int:
        return len(self.values)

    @property
    def n_nzr(self) -> float:
        return self.n_nz / self.n_rows

    @property
    def is_square(self) -> bool:
        return self.n_rows == self.n_cols

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def bandwidth(self) -> int:
        """max |i - j| over stored entries."""
        if self.n_nz == 0:
            return 0
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_nnz())
        return int(np.abs(rows - self.col_idx.astype(np.int64)).max())

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return scipy.sparse.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.n_rows, self.n_cols))

    @classmethod
    def from_scipy(cls, a) -> "SparseMatrixCRS":
        a = a.tocsr()
        a.sum_duplicates()
        a.sort_indices()
        if a.nnz >= 2**31 or max(a.shape) >= 2**31:
            raise ValueError("matrix too large for 4-byte indices")
        return cls(a.shape[0], a.shape[1], a.data.astype(np.float64),
                   a.indices.astype(np.int32), a.indptr.astype(np.int32))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrixCRS":
        m = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=shape)
        return cls.from_scipy(m)


def load_matrix_market(path) -> SparseMatrixCRS:
    """Read a MatrixMarket coordinate file into CRS.

    Symmetric/skew files are expanded to full storage; duplicate entries are
    summed; rows come out with sorted column indices.
    """
    try:
        m = scipy.io.mmread(path)
    except (ValueError, OSError, FileNotFoundError) as e:
        raise MatrixMarketError(f"{path}: {e}") from e
    if not scipy.sparse.issparse(m):
        raise MatrixMarketError(f"{path}: MatrixMarket 'array' format not supported; "
                                f"need 'coordinate'")
    if np.iscomplexobj(m.data):
        raise MatrixMarketError(f"{path}: complex matrices not supported")
    return SparseMatrixCRS.from_scipy(m)


def rcm_permute(m: SparseMatrixCRS):
    """Reverse Cuthill-McKee reordering for data locality.

    The ordering is computed on the symmetrized pattern (BFS from a
    pseudo-peripheral vertex, neighbors by increasing degree, order
    reversed).  Returns (P A P^T, perm) with perm[i] = original index of
    the row placed at position i.
    """
    if not m.is_square:
        raise ValueError("RCM needs a square matrix")
    a = m.to_scipy()
    pattern = a + a.T  # symmetrize the graph for the ordering only
    perm = scipy.sparse.csgraph.reverse_cuthill_mckee(pattern.tocsr(), symmetric_mode=True)
    perm = np.asarray(perm, dtype=np.int64)
    permuted = a[perm][:, perm].tocsr()
    return SparseMatrixCRS.from_scipy(permuted), perm


def min_spmv_traffic(n_nzr: float, value_bytes: int = 8, index_bytes: int = 4) -> float:
    """LRU-model lower bound on memory traffic per nonzero: 12 + 28/Nnzr.

    Matrix entries stream once (value + index), the x gather hits each
    element once, y costs a write-allocate plus writeback, and the row
    pointer streams: ((v+i)*Nnzr + 3v + i) / Nnzr bytes per nonzero.
    """
    if n_nzr < 1:
        raise ValueError("n_nzr must be >= 1")
    return (value_bytes + index_bytes) + (3 * value_bytes + index_bytes) / n_nzr


# ---------------------------------------------------------------------------
# execute mode

@jit
def _spmv_kernel(values, col_idx, row_ptr, x, y):
    for i in range(row_ptr.shape[0] - 1):
        s = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            s += values[k] * x[col_idx[k]]
        y[i] = s


def spmv(m: SparseMatrixCRS, x, out=None):
    """y = A x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != m.n_cols:
        raise ValueError(f"x has {x.shape[0]} entries, matrix has {m.n_cols} columns")
    y = out if out is not None else np.empty(m.n_rows, dtype=np.float64)
    _spmv_kernel(m.values, m.col_idx, m.row_ptr, x, y)
    return y


def spmpv(m: SparseMatrixCRS, x, p: int):
    """y_i = A^i x for i = 0..p; returns all p+1 vectors."""
    if p < 1:
        raise ValueError("power must be >= 1")
    if not m.is_square:
        raise ValueError("matrix powers need a square matrix")
    vecs = [np.array(x, dtype=np.float64)]
    for _ in range(p):
        vecs.append(spmv(m, vecs[-1]))
    return vecs


# ---------------------------------------------------------------------------
# trace mode

@dataclass(frozen=True)
class CrsLayout:
    """Byte addresses of the CRS arrays and the dense vectors in a trace."""

    values: int
    col_idx: int
    row_ptr: int
    vectors: tuple   # base address per dense vector

    @classmethod
    def default(cls, m: SparseMatrixCRS, n_vectors: int = 2, align: int = 64,
                guard: int = 4096) -> "CrsLayout":
        def bump(addr, nbytes):
            return (addr + nbytes + guard + align - 1) // align * align

        values = align
        col_idx = bump(values, ELEM * m.n_nz)
        row_ptr = bump(col_idx, IDX * m.n_nz)
        vecs = []
        addr = bump(row_ptr, IDX * (m.n_rows + 1))
        for _ in range(n_vectors):
            vecs.append(addr)
            addr = bump(addr, ELEM * max(m.n_rows, m.n_cols))
        return cls(values, col_idx, row_ptr, tuple(vecs))


def _ragged_arange(counts):
    """[0..c0), [0..c1), ... concatenated."""
    total = int(counts.sum())
    out = np.arange(total, dtype=np.int64)
    out -= np.repeat(np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    return out


def _crs_sweep_trace(m: SparseMatrixCRS, layout: CrsLayout, rows, gather_base, tail):
    """Trace of a CRS row sweep in the given row order.

    Per row: load row_ptr[i] and row_ptr[i+1], then per nonzero the value
    (8 B), column index (4 B) and the gathered vector element (8 B), then
    the ``tail`` accesses [(base, kind), ...] addressed by row index.
    """
    rows = np.asarray(rows, dtype=np.int64)
    counts = m.row_nnz()[rows].astype(np.int64)
    per_row = 3 * counts + 2 + len(tail)
    starts = np.zeros(rows.shape[0], dtype=np.int64)
    np.cumsum(per_row[:-1], out=starts[1:])
    addrs = np.empty(int(per_row.sum()), dtype=np.uint64)
    kinds = np.zeros(addrs.shape[0], dtype=np.uint8)

    urows = rows.astype(np.uint64)
    addrs[starts] = layout.row_ptr + IDX * urows
    addrs[starts + 1] = layout.row_ptr + IDX * (urows + 1)

    ks = np.repeat(m.row_ptr[rows].astype(np.int64), counts) + _ragged_arange(counts)
    slot = np.repeat(starts + 2, counts) + 3 * _ragged_arange(counts)
    addrs[slot] = layout.values + ELEM * ks.astype(np.uint64)
    addrs[slot + 1] = layout.col_idx + IDX * ks.astype(np.uint64)
    addrs[slot + 2] = gather_base + ELEM * m.col_idx[ks].astype(np.uint64)

    tail_at = starts + 2 + 3 * counts
    for j, (base, kind) in enumerate(tail):
        addrs[tail_at + j] = base + ELEM * urows
        kinds[tail_at + j] = int(kind)
    return addrs, kinds


def spmv_trace(m: SparseMatrixCRS, layout: CrsLayout = None, x_vec: int = 0,
               y_vec: int = 1) -> Trace:
    """Address stream of y = A x (x gathered at real col_idx targets)."""
    if layout is None:
        layout = CrsLayout.default(m)
    rows = np.arange(m.n_rows, dtype=np.int64)
    addrs, kinds = _crs_sweep_trace(m, layout, rows, layout.vectors[x_vec],
                                    [(layout.vectors[y_vec], AccessKind.STORE)])
    return Trace(addrs, kinds, work_count=m.n_rows, label="spmv")


def spmpv_trace(m: SparseMatrixCRS, p: int, layout: CrsLayout = None) -> Trace:
    """Address stream of y = A^p x with p+1 resident vectors."""
    if p < 1:
        raise ValueError("power must be >= 1")
    if not m.is_square:
        raise ValueError("matrix powers need a square matrix")
    if layout is None:
        layout = CrsLayout.default(m, n_vectors=p + 1)
    parts = [spmv_trace(m, layout, x_vec=i - 1, y_vec=i) for i in range(1, p + 1)]
    return Trace(np.concatenate([t.addrs for t in parts]),
                 np.concatenate([t.kinds for t in parts]),
                 work_count=p * m.n_nz, label=f"spmpv-p{p}")


def symgs_sweep_trace(m: SparseMatrixCRS, layout: CrsLayout, x_vec: int,
                      r_vec: int, backward: bool = False) -> Trace:
    """One Gauss-Seidel sweep: per row the matrix row, the x gather, the
    right-hand side load and the x store."""
    rows = np.arange(m.n_rows, dtype=np.int64)
    if backward:
        rows = rows[::-1].copy()
    addrs, kinds = _crs_sweep_trace(m, layout, rows, layout.vectors[x_vec],
                                    [(layout.vectors[r_vec], AccessKind.LOAD),
                                     (layout.vectors[x_vec], AccessKind.STORE)])
    return Trace(addrs, kinds, work_count=m.n_rows,
                 label="symgs-bwd" if backward else "symgs-fwd")


def dot_trace(n: int, bases, layout_label="dot") -> Trace:
    """Dot product: one load per element per distinct input vector."""
    if n <= 0:
        raise ValueError("n must be positive")
    bases = list(dict.fromkeys(bases))  # drop duplicate operands: one read suffices
    idx = np.arange(n, dtype=np.uint64) * ELEM
    cols = [b + idx for b in bases]
    addrs = np.empty((n, len(cols)), dtype=np.uint64)
    for j, c in enumerate(cols):
        addrs[:, j] = c
    return Trace(addrs.ravel(), np.zeros(n * len(cols), dtype=np.uint8),
                 work_count=n, label=layout_label)


def waxpby_trace(n: int, w_base: int, x_base: int, y_base: int) -> Trace:
    """w = a x + b y traces; when w aliases x or y the store needs no
    write-allocate because the line was just loaded."""
    if n <= 0:
        raise ValueError("n must be positive")
    idx = np.arange(n, dtype=np.uint64) * ELEM
    cols, kinds = [], []
    for b in dict.fromkeys((x_base, y_base)):
        cols.append(b + idx)
        kinds.append(int(AccessKind.LOAD))
    cols.append(w_base + idx)
    kinds.append(int(AccessKind.STORE))
    addrs = np.empty((n, len(cols)), dtype=np.uint64)
    for j, c in enumerate(cols):
        addrs[:, j] = c
    kind_arr = np.tile(np.asarray(kinds, dtype=np.uint8), n)
    return Trace(addrs.ravel(), kind_arr, work_count=n, label="waxpby")


# ---------------------------------------------------------------------------
# problem generator

def stencil27_matrix(nx: int, ny: int, nz: int) -> SparseMatrixCRS:
    """27-point stencil operator on an nx*ny*nz grid (HPCG convention):
    diagonal 26, off-diagonals -1, boundary rows simply have fewer entries.
    Symmetric positive definite."""
    if nx < 1 or ny < 1 or nz < 1:
        raise ValueError("grid dims must be >= 1")
    n = nx * ny * nz
    ix = np.arange(n, dtype=np.int64)
    gx = ix % nx
    gy = (ix // nx) % ny
    gz = ix // (nx * ny)

    offsets = [(dx, dy, dz)
               for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    offsets.sort(key=lambda o: o[0] + nx * (o[1] + ny * o[2]))

    cols_per = np.full((len(offsets), n), -1, dtype=np.int64)
    vals_per = np.empty((len(offsets), n), dtype=np.float64)
    for j, (dx, dy, dz) in enumerate(offsets):
        ok = ((gx + dx >= 0) & (gx + dx < nx)
              & (gy + dy >= 0) & (gy + dy < ny)
              & (gz + dz >= 0) & (gz + dz < nz))
        cols_per[j, ok] = ix[ok] + dx + nx * (dy + ny * dz)
        vals_per[j] = 26.0 if (dx, dy, dz) == (0, 0, 0) else -1.0

    # row-major flatten keeps per-row entries in ascending column order
    cols_rm = cols_per.T.ravel()
    vals_rm = vals_per.T.ravel()
    mask = cols_rm >= 0
    counts = (cols_per >= 0).sum(axis=0)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return SparseMatrixCRS(n, n, vals_rm[mask], cols_rm[mask].astype(np.int32),
                           row_ptr.astype(np.int32))
