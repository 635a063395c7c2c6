"""Single-process HPCG-style preconditioned CG over the 27-point stencil.

The solver mirrors the reference algorithm: per iteration one multigrid
preconditioner application (symGS pre-smooth, residual SpMV, symGS
post-smooth on the finest grid), three dot products, three vector updates
and one SpMV.  A KernelAccounting instance records per-kernel flops (HPCG
convention: 2 per nonzero / element multiply-add), rows processed, call
order, and — after a traffic measurement — simulated memory bytes.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import jit
from .cachesim import CacheHierarchy
from .machine import (
    KernelKind,
    MachineModel,
    code_balance,
    hpcg_composite,
    hpcg_kernel_models,
    roofline_perf,
)
from .sparse import (
    CrsLayout,
    SparseMatrixCRS,
    dot_trace,
    spmv,
    spmv_trace,
    stencil27_matrix,
    symgs_sweep_trace,
    waxpby_trace,
)


class CgBreakdownError(ValueError):
    """p^T A p <= 0: the operator is not positive definite."""


# ---------------------------------------------------------------------------
# accounting

@dataclass
class BucketStats:
    flops: float = 0.0
    rows: int = 0
    calls: int = 0
    sim_bytes: int | None = None
    sim_rows: int = 0

    @property
    def flops_per_row(self) -> float:
        return self.flops / self.rows if self.rows else 0.0

    @property
    def bytes_per_row(self) -> float:
        if self.sim_bytes is None or not self.sim_rows:
            raise ValueError("no simulated traffic attached")
        return self.sim_bytes / self.sim_rows


class KernelAccounting:
    """Per-kernel flop/row/call bookkeeping with an ordered call log."""

    def __init__(self):
        self.buckets: dict[str, BucketStats] = {}
        self.call_log: list[str] = []
        self.iteration_marks: list[int] = []

    def bucket(self, name) -> BucketStats:
        return self.buckets.setdefault(name, BucketStats())

    def add(self, name, flops, rows, log=True):
        """Record one kernel invocation.  ``log=False`` marks work internal
        to a composite kernel: only flops accrue, the rows/calls of the
        enclosing bucket are counted by its owner."""
        b = self.bucket(name)
        b.flops += flops
        if log:
            b.rows += rows
            b.calls += 1
            self.call_log.append(name)

    def mark_iteration(self):
        self.iteration_marks.append(len(self.call_log))

    def calls_per_iteration(self):
        """List of {kernel: count} dicts, one per solver iteration."""
        out = []
        bounds = self.iteration_marks + [len(self.call_log)]
        for a, b in zip(bounds, bounds[1:]):
            seg = self.call_log[a:b]
            out.append({k: seg.count(k) for k in sorted(set(seg))})
        return out

    def total_flops(self, buckets=None) -> float:
        names = buckets if buckets is not None else self.buckets
        return sum(self.buckets[n].flops for n in names if n in self.buckets)

    def summary(self) -> dict:
        d = {}
        for name, b in self.buckets.items():
            e = {"flops": b.flops, "rows": b.rows, "calls": b.calls,
                 "flops_per_row": b.flops_per_row}
            if b.sim_bytes is not None and b.sim_rows:
                e["sim_bytes"] = b.sim_bytes
                e["bytes_per_row"] = b.bytes_per_row
            d[name] = e
        return d


# ---------------------------------------------------------------------------
# BLAS-1 kernels

def dot(u, v, acct: KernelAccounting | None = None, bucket="dot", log=True) -> float:
    if u.shape != v.shape:
        raise ValueError("dot operands must have equal length")
    if acct is not None:
        acct.add(bucket, 2.0 * u.shape[0], u.shape[0], log=log)
    return float(np.dot(u, v))


def waxpby(alpha, x, beta, y, out=None, acct: KernelAccounting | None = None,
           bucket="waxpby", log=True):
    """w = alpha x + beta y."""
    if x.shape != y.shape:
        raise ValueError("waxpby operands must have equal length")
    if out is None:
        out = np.empty_like(x)
    np.multiply(x, alpha, out=out)
    out += beta * y
    if acct is not None:
        acct.add(bucket, 2.0 * x.shape[0], x.shape[0], log=log)
    return out


def _spmv(m, x, out=None, acct=None, bucket="spmv", log=True):
    y = spmv(m, x, out=out)
    if acct is not None:
        acct.add(bucket, 2.0 * m.n_nz, m.n_rows, log=log)
    return y


# ---------------------------------------------------------------------------
# symmetric Gauss-Seidel

@jit
def _gs_sweep_kernel(values, col_idx, row_ptr, diag, r, x, backward):
    n = row_ptr.shape[0] - 1
    for ii in range(n):
        i = n - 1 - ii if backward else ii
        s = r[i]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = col_idx[k]
            if j != i:
                s -= values[k] * x[j]
        x[i] = s / diag[i]


def extract_diagonal(m: SparseMatrixCRS) -> np.ndarray:
    diag = np.zeros(m.n_rows, dtype=np.float64)
    rows = np.repeat(np.arange(m.n_rows), m.row_nnz())
    on_diag = rows == m.col_idx
    diag[rows[on_diag]] = m.values[on_diag]
    if np.any(diag == 0.0):
        raise ValueError("matrix has a zero diagonal entry")
    return diag


def symgs(m: SparseMatrixCRS, r, x, diag=None, acct=None, bucket="symgs", log=True):
    """Forward sweep over rows 0..n-1 then backward sweep n-1..0, updating
    x in place (strictly sequential reference semantics)."""
    if not m.is_square:
        raise ValueError("symGS needs a square matrix")
    if r.shape[0] != m.n_rows or x.shape[0] != m.n_rows:
        raise ValueError("vector length mismatch")
    if diag is None:
        diag = extract_diagonal(m)
    _gs_sweep_kernel(m.values, m.col_idx, m.row_ptr, diag, r, x, False)
    _gs_sweep_kernel(m.values, m.col_idx, m.row_ptr, diag, r, x, True)
    if acct is not None:
        acct.add(bucket, 2.0 * (2 * m.n_nz), m.n_rows, log=log)
    return x


# ---------------------------------------------------------------------------
# multigrid hierarchy

@dataclass
class MgLevel:
    matrix: SparseMatrixCRS
    dims: tuple
    diag: np.ndarray
    f2c: np.ndarray | None = None   # fine index of each coarse point


def build_mg_levels(nx, ny, nz, depth=4):
    """Geometric levels for the stencil problem; each coarsening halves
    every dimension (coarse grids must keep dims >= 2)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    levels = []
    dims = (nx, ny, nz)
    for d in range(depth):
        m = stencil27_matrix(*dims)
        levels.append(MgLevel(matrix=m, dims=dims, diag=extract_diagonal(m)))
        if d < depth - 1:
            if any(s % 2 for s in dims) or any(s // 2 < 2 for s in dims):
                raise ValueError(
                    f"dims {dims} not coarsenable at depth {depth}: every dimension "
                    f"must halve to at least 2")
            cx, cy, cz = (s // 2 for s in dims)
            fx, fy, _ = dims
            ci = np.arange(cx * cy * cz, dtype=np.int64)
            gx, gy, gz = ci % cx, (ci // cx) % cy, ci // (cx * cy)
            levels[-1].f2c = 2 * gx + fx * (2 * gy + fy * 2 * gz)
            dims = (cx, cy, cz)
    return levels


def mg_cycle(levels, r, lvl=0, acct: KernelAccounting | None = None):
    """V-cycle preconditioner application z = MG(A, r).

    Finest grid: symGS pre-smooth, residual SpMV, (restrict/recurse/prolong
    when a coarser level exists), symGS post-smooth.  The coarsest level of
    a multi-level hierarchy applies a single symGS.  A single-level
    hierarchy still performs symGS + SpMV + symGS, the configuration the
    composite model covers.  Zero residual in gives zero correction out.
    """
    level = levels[lvl]
    m = level.matrix
    bucket = "mg" if lvl == 0 else "mg_coarse"
    if acct is not None and lvl == 0:
        acct.call_log.append("mg")
    z = np.zeros(m.n_rows, dtype=np.float64)
    symgs(m, r, z, diag=level.diag, acct=acct, bucket=bucket, log=False)
    if lvl + 1 < len(levels):
        az = _spmv(m, z, acct=acct, bucket=bucket, log=False)
        f2c = level.f2c
        rc = r[f2c] - az[f2c]
        if acct is not None:
            acct.bucket("mg_coarse").flops += f2c.shape[0]
        zc = mg_cycle(levels, rc, lvl + 1, acct=acct)
        z[f2c] += zc
        if acct is not None:
            acct.bucket("mg_coarse").flops += f2c.shape[0]
        symgs(m, r, z, diag=level.diag, acct=acct, bucket=bucket, log=False)
    elif len(levels) == 1:
        _spmv(m, z, acct=acct, bucket=bucket, log=False)
        symgs(m, r, z, diag=level.diag, acct=acct, bucket=bucket, log=False)
    if acct is not None and lvl == 0:
        acct.bucket("mg").calls += 1
        acct.bucket("mg").rows += m.n_rows
    return z


# ---------------------------------------------------------------------------
# the solver

@dataclass
class CgResult:
    x: np.ndarray
    residuals: list            # relative residual norms, [0] = 1.0
    accounting: KernelAccounting
    iterations: int
    converged: bool

    @property
    def residual_drop(self) -> float:
        return self.residuals[0] / self.residuals[-1]


def cg_solve(levels, b, max_iter=25, tol=0.0, precondition=True,
             acct: KernelAccounting | None = None) -> CgResult:
    """Preconditioned CG; per iteration exactly MG, DOT, WAXPBY, SpMV,
    DOT, WAXPBY, WAXPBY, DOT (call counts 1/3/3/1)."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    a = levels[0].matrix
    n = a.n_rows
    if b.shape[0] != n:
        raise ValueError("right-hand side length mismatch")
    if acct is None:
        acct = KernelAccounting()

    x = np.zeros(n, dtype=np.float64)
    p = np.zeros(n, dtype=np.float64)
    # initial residual r = b - A x0 (outside the iteration accounting)
    ax = _spmv(a, x, acct=acct, bucket="init", log=False)
    r = waxpby(1.0, b, -1.0, ax, acct=acct, bucket="init", log=False)
    normr0 = math.sqrt(dot(r, r, acct=acct, bucket="init", log=False))
    if normr0 == 0.0:
        return CgResult(x, [0.0], acct, 0, True)

    residuals = [1.0]
    rtz = 1.0
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        acct.mark_iteration()
        if precondition:
            z = mg_cycle(levels, r, acct=acct)
        else:
            z = r.copy()
            acct.call_log.append("mg")  # identity preconditioner slot
            acct.bucket("mg").calls += 1
        oldrtz = rtz
        rtz = dot(r, z, acct=acct)
        beta = rtz / oldrtz
        p = waxpby(beta, p, 1.0, z, out=p, acct=acct)
        ap = _spmv(a, p, acct=acct)
        pap = dot(p, ap, acct=acct)
        if pap <= 0.0:
            raise CgBreakdownError(f"p^T A p = {pap} at iteration {k}")
        alpha = rtz / pap
        x = waxpby(1.0, x, alpha, p, out=x, acct=acct)
        r = waxpby(1.0, r, -alpha, ap, out=r, acct=acct)
        rnorm = math.sqrt(dot(r, r, acct=acct))
        residuals.append(rnorm / normr0)
        if tol > 0.0 and residuals[-1] <= tol:
            converged = True
            break
    return CgResult(x, residuals, acct, k, converged)


# ---------------------------------------------------------------------------
# traffic measurement against the model

def measure_kernel_traffic(m: SparseMatrixCRS, cache_configs,
                           acct: KernelAccounting | None = None) -> KernelAccounting:
    """Run the four solver kernels in trace mode through the cache simulator,
    each standalone on a cold hierarchy, and attach the measured bytes.

    DOT is the average over the three solver dot products (two with two
    input vectors, the norm with one).
    """
    if acct is None:
        acct = KernelAccounting()
    layout = CrsLayout.default(m, n_vectors=6)
    v = layout.vectors
    n = m.n_rows

    def fresh():
        return CacheHierarchy(cache_configs)

    def run_traces(traces):
        h = fresh()
        for t in traces:
            h.run(t.addrs, t.kinds)
        h.flush_dirty()
        return h.report().bytes_total

    # three standalone dots: <r,z>, <p,Ap>, <r,r>
    bytes_dot = 0
    for bases in ((v[0], v[1]), (v[2], v[3]), (v[0], v[0])):
        bytes_dot += run_traces([dot_trace(n, bases)])
    b = acct.bucket("dot")
    b.sim_bytes = bytes_dot
    b.sim_rows = 3 * n

    # p = beta p + z: w aliases x, so no write-allocate on the store
    b = acct.bucket("waxpby")
    b.sim_bytes = run_traces([waxpby_trace(n, w_base=v[2], x_base=v[2], y_base=v[1])])
    b.sim_rows = n

    b = acct.bucket("spmv")
    b.sim_bytes = run_traces([spmv_trace(m, layout, x_vec=2, y_vec=3)])
    b.sim_rows = n

    # MG finest-grid sequence: pre-smooth, residual SpMV, post-smooth
    # (vectors: r = v[0], z = v[1], Az = v[3])
    mg_traces = [
        symgs_sweep_trace(m, layout, x_vec=1, r_vec=0, backward=False),
        symgs_sweep_trace(m, layout, x_vec=1, r_vec=0, backward=True),
        spmv_trace(m, layout, x_vec=1, y_vec=3),
        symgs_sweep_trace(m, layout, x_vec=1, r_vec=0, backward=False),
        symgs_sweep_trace(m, layout, x_vec=1, r_vec=0, backward=True),
    ]
    b = acct.bucket("mg")
    b.sim_bytes = run_traces(mg_traces)
    b.sim_rows = n
    return acct


@dataclass(frozen=True)
class KernelValidation:
    kernel: str
    measured_bytes_per_row: float
    predicted_bytes_per_row: float
    deviation: float          # (measured - predicted) / predicted
    flagged: bool


@dataclass(frozen=True)
class ValidationReport:
    rows: tuple
    composite_predicted_gflops: float
    composite_from_measured_gflops: float

    def to_dict(self):
        return {
            "kernels": [
                {"kernel": r.kernel,
                 "measured_bytes_per_row": r.measured_bytes_per_row,
                 "predicted_bytes_per_row": r.predicted_bytes_per_row,
                 "deviation": r.deviation,
                 "flagged": r.flagged}
                for r in self.rows
            ],
            "composite_predicted_gflops": self.composite_predicted_gflops,
            "composite_from_measured_gflops": self.composite_from_measured_gflops,
        }


_MODEL_KINDS = {
    "dot": KernelKind.DOT_HPCG_AVG,
    "waxpby": KernelKind.WAXPBY,
    "spmv": KernelKind.SPMV,
    "mg": KernelKind.MG_FINEST,
}


def validate_against_model(acct: KernelAccounting, machine: MachineModel,
                           nnzr: float = 27.0, threshold: float = 0.35) -> ValidationReport:
    """Compare simulated per-kernel bytes/row with the model's code balances
    and the composite prediction with one recomputed from measured traffic."""
    rows = []
    measured_models = []
    for name, kind in _MODEL_KINDS.items():
        b = acct.buckets.get(name)
        if b is None or b.sim_bytes is None:
            continue
        predicted = code_balance(kind, nnzr=nnzr)
        measured = b.bytes_per_row
        dev = (measured - predicted) / predicted
        rows.append(KernelValidation(name, measured, predicted, dev,
                                     flagged=abs(dev) > threshold))
        ref = dict(zip(_MODEL_KINDS, hpcg_kernel_models(nnzr)))[name]
        measured_models.append(
            ref.__class__(ref.name, measured, ref.flops_per_row, ref.calls))
    if not rows:
        raise ValueError("accounting carries no simulated traffic")
    predicted_comp = hpcg_composite(hpcg_kernel_models(nnzr), machine).perf_gflops
    measured_comp = hpcg_composite(measured_models, machine).perf_gflops
    return ValidationReport(tuple(rows), predicted_comp, measured_comp)
