"""Trace-driven set-associative multi-level cache simulator.

State is kept in flat structure-of-arrays form so the per-access loop can
run under numba (see roofsim._accel).  Row ``base[l] + set`` of each 2-D
array holds one cache set; columns are ways.

Semantics
---------
* Loads and write-allocate stores search L1 -> LLC.  A miss at every level
  reads one line from memory.
* Inclusive last level: memory fills populate every level; an LLC eviction
  back-invalidates inner copies (dirty inner copies fold into the writeback).
* Victim (non-inclusive) last level: memory fills populate only the inner
  levels; the LLC is filled by lines evicted from the level above it; an LLC
  hit promotes the line inward and invalidates the LLC copy.
* Non-temporal stores touch no cache level.  They drain through a small set
  of write-combine buffers: one full line is counted per distinct line while
  it has an open buffer, so sequential NT stores to a line cost line_size
  bytes once.
* Write-back: a dirty line reaching memory adds line_size to bytes written.
"""

import numpy as np

from .._accel import jit
from .config import (
    AccessKind,
    CacheConfig,
    GeometryError,
    InclusionMode,
    PolicyKind,
    validate_hierarchy,
)
from .report import TrafficReport

# counter slots
_H0, _M0, _RD, _WR, _STAMP, _WCPTR = 0, 3, 6, 7, 8, 9
_N_COUNTERS = 10

_POL_CODE = {
    PolicyKind.TRUE_LRU: 0,
    PolicyKind.TREE_PLRU: 1,
    PolicyKind.STREAM_ONE_WAY: 2,
    PolicyKind.ADAPTIVE_DUELING: 3,
}

_WC_BUFFERS = 8


def _build_tree(leaf_ways):
    """Binary tree over the given ways (ceil/floor range split).

    Returns (children, paths) where children[n] = (left, right) with values
    >= 0 meaning a node index and < 0 encoding leaf way ``-(v + 1)``, and
    paths[way] = [(node, side), ...] from the root.
    """
    children = []

    def build(lo, hi):
        if hi - lo == 1:
            return -(leaf_ways[lo] + 1)
        nid = len(children)
        children.append([0, 0])
        mid = lo + (hi - lo + 1) // 2
        children[nid][0] = build(lo, mid)
        children[nid][1] = build(mid, hi)
        return nid

    paths = {w: [] for w in leaf_ways}
    if len(leaf_ways) > 1:
        build(0, len(leaf_ways))

        def walk(node, trail):
            for side in (0, 1):
                c = children[node][side]
                if c < 0:
                    paths[-c - 1] = trail + [(node, side)]
                else:
                    walk(c, trail + [(node, side)])

        walk(0, [])
    return children, paths


@jit
def _tree_touch(bits_row, pnode_w, pside_w, plen):
    # point every node on the way's path away from it (mark MRU)
    for d in range(plen):
        bits_row[pnode_w[d]] = 1 - pside_w[d]


@jit
def _tree_victim(bits_row, child_l):
    node = 0
    while True:
        c = child_l[node, bits_row[node]]
        if c < 0:
            return -c - 1
        node = c


@jit
def _effective_policy(pol_l, leader_row, psel_l, psel_threshold):
    if pol_l != 3:
        return pol_l
    if leader_row == 1:
        return 1
    if leader_row == 2:
        return 2
    return 2 if psel_l >= psel_threshold else 1


@jit
def _victim_way(valid, stamp, tbits, row, W, pol_eff, tchild_l):
    # invalid ways fill first (lowest index); only full sets consult the policy
    for k in range(W):
        if valid[row, k] == 0:
            return k
    if pol_eff == 2 or W == 1:
        return 0
    if pol_eff == 0:
        w = 0
        best = stamp[row, 0]
        for k in range(1, W):
            if stamp[row, k] < best:
                best = stamp[row, k]
                w = k
        return w
    return _tree_victim(tbits[row], tchild_l)


@jit
def _sim_kernel(addrs, kinds, out_lvl, record,
                n_levels, line_shift, victim_mode,
                sets, ways, base, pol,
                tags, valid, dirty, stamp,
                tbits, sbits,
                tchild, tpnode, tpside, tplen,
                schild, spnode, spside, splen,
                leader, psel, psel_threshold, psel_max,
                counters, wc_lines):
    last = n_levels - 1
    line_bytes = 1 << line_shift
    for i in range(addrs.shape[0]):
        line = np.int64(addrs[i] >> line_shift)
        kind = kinds[i]

        if kind == 2:  # non-temporal store
            found = False
            for j in range(wc_lines.shape[0]):
                if wc_lines[j] == line:
                    found = True
                    break
            if not found:
                counters[_WR] += line_bytes
                wc_lines[counters[_WCPTR] % wc_lines.shape[0]] = line
                counters[_WCPTR] += 1
            if record:
                out_lvl[i] = -2
            continue

        is_store = kind == 1

        # search inward->outward
        hl = -1
        hw = -1
        hrow = -1
        for l in range(n_levels):
            row = base[l] + line % sets[l]
            W = ways[l]
            w = -1
            for k in range(W):
                if valid[row, k] == 1 and tags[row, k] == line:
                    w = k
                    break
            if w >= 0:
                counters[_H0 + l] += 1
                hl = l
                hw = w
                hrow = row
                break
            counters[_M0 + l] += 1
            if pol[l] == 3:  # set-dueling selector counts leader misses
                lt = leader[row]
                if lt == 1:
                    if psel[l] < psel_max:
                        psel[l] += 1
                elif lt == 2:
                    if psel[l] > 0:
                        psel[l] -= 1

        if hl == 0:
            stamp[hrow, hw] = counters[_STAMP]
            counters[_STAMP] += 1
            W = ways[0]
            if W > 1:
                _tree_touch(tbits[hrow], tpnode[0, hw], tpside[0, hw], tplen[0, hw])
                if hw >= 1 and W > 2:
                    _tree_touch(sbits[hrow], spnode[0, hw], spside[0, hw], splen[0, hw])
            if is_store:
                dirty[hrow, hw] = 1
            p = _effective_policy(pol[0], leader[hrow], psel[0], psel_threshold)
            if p == 2 and hw == 0 and W > 1:
                _stream_promote(0, hrow, ways, tags, valid, dirty, stamp,
                                tbits, sbits, tchild, tpnode, tpside, tplen,
                                schild, spnode, spside, splen, counters)
            if record:
                out_lvl[i] = 0
            continue

        if hl > 0:
            carried = np.uint8(0)
            if hl == last and victim_mode == 1:
                carried = dirty[hrow, hw]
                valid[hrow, hw] = 0
                dirty[hrow, hw] = 0
            else:
                stamp[hrow, hw] = counters[_STAMP]
                counters[_STAMP] += 1
                W = ways[hl]
                if W > 1:
                    _tree_touch(tbits[hrow], tpnode[hl, hw], tpside[hl, hw], tplen[hl, hw])
                    if hw >= 1 and W > 2:
                        _tree_touch(sbits[hrow], spnode[hl, hw], spside[hl, hw], splen[hl, hw])
                p = _effective_policy(pol[hl], leader[hrow], psel[hl], psel_threshold)
                if p == 2 and hw == 0 and W > 1:
                    _stream_promote(hl, hrow, ways, tags, valid, dirty, stamp,
                                    tbits, sbits, tchild, tpnode, tpside, tplen,
                                    schild, spnode, spside, splen, counters)
            for l in range(hl - 1, -1, -1):
                dd = np.uint8(0)
                if l == hl - 1 and carried == 1:
                    dd = np.uint8(1)
                if l == 0 and is_store:
                    dd = np.uint8(1)
                _install(l, line, dd,
                         n_levels, line_shift, victim_mode,
                         sets, ways, base, pol,
                         tags, valid, dirty, stamp,
                         tbits, sbits,
                         tchild, tpnode, tpside, tplen,
                         schild, spnode, spside, splen,
                         leader, psel, psel_threshold, counters)
            if record:
                out_lvl[i] = hl
            continue

        # miss everywhere: one line from memory
        counters[_RD] += line_bytes
        fill_from = last - 1 if (victim_mode == 1 and n_levels > 1) else last
        for l in range(fill_from, -1, -1):
            dd = np.uint8(1) if (l == 0 and is_store) else np.uint8(0)
            _install(l, line, dd,
                     n_levels, line_shift, victim_mode,
                     sets, ways, base, pol,
                     tags, valid, dirty, stamp,
                     tbits, sbits,
                     tchild, tpnode, tpside, tplen,
                     schild, spnode, spside, splen,
                     leader, psel, psel_threshold, counters)
        if record:
            out_lvl[i] = -1


@jit
def _stream_promote(l, row, ways, tags, valid, dirty, stamp,
                    tbits, sbits, tchild, tpnode, tpside, tplen,
                    schild, spnode, spside, splen, counters):
    # a reused line in the designated way swaps into a protected way chosen
    # by tree-PLRU over ways 1..W-1; the displaced occupant lands in way 0
    W = ways[l]
    t = 1 if W == 2 else _tree_victim(sbits[row], schild[l])
    tmp_t = tags[row, 0]
    tags[row, 0] = tags[row, t]
    tags[row, t] = tmp_t
    tmp8 = valid[row, 0]
    valid[row, 0] = valid[row, t]
    valid[row, t] = tmp8
    tmp8 = dirty[row, 0]
    dirty[row, 0] = dirty[row, t]
    dirty[row, t] = tmp8
    stamp[row, 0] = stamp[row, t]
    stamp[row, t] = counters[_STAMP]
    counters[_STAMP] += 1
    _tree_touch(tbits[row], tpnode[l, t], tpside[l, t], tplen[l, t])
    if W > 2:
        _tree_touch(sbits[row], spnode[l, t], spside[l, t], splen[l, t])


@jit
def _install(l0, line0, dirty0,
             n_levels, line_shift, victim_mode,
             sets, ways, base, pol,
             tags, valid, dirty, stamp,
             tbits, sbits,
             tchild, tpnode, tpside, tplen,
             schild, spnode, spside, splen,
             leader, psel, psel_threshold, counters):
    """Place a line at level l0, draining displaced lines outward."""
    last = n_levels - 1
    line_bytes = 1 << line_shift
    cur_l = l0
    cur_line = line0
    cur_d = dirty0
    while True:
        row = base[cur_l] + cur_line % sets[cur_l]
        W = ways[cur_l]
        # merge with an existing copy
        merged = False
        for k in range(W):
            if valid[row, k] == 1 and tags[row, k] == cur_line:
                if cur_d == 1:
                    dirty[row, k] = 1
                merged = True
                break
        if merged:
            return
        p = _effective_policy(pol[cur_l], leader[row], psel[cur_l], psel_threshold)
        w = _victim_way(valid, stamp, tbits, row, W, p, tchild[cur_l])
        ev_has = valid[row, w] == 1
        ev_line = tags[row, w]
        ev_d = dirty[row, w]
        tags[row, w] = cur_line
        valid[row, w] = 1
        dirty[row, w] = cur_d
        stamp[row, w] = counters[_STAMP]
        counters[_STAMP] += 1
        if W > 1:
            _tree_touch(tbits[row], tpnode[cur_l, w], tpside[cur_l, w], tplen[cur_l, w])
            if w >= 1 and W > 2:
                _tree_touch(sbits[row], spnode[cur_l, w], spside[cur_l, w], splen[cur_l, w])
        if not ev_has:
            return
        if cur_l == last:
            wr = ev_d == 1
            if victim_mode == 0 and n_levels > 1:
                # inclusive LLC eviction back-invalidates inner copies
                for il in range(last):
                    row2 = base[il] + ev_line % sets[il]
                    for k in range(ways[il]):
                        if valid[row2, k] == 1 and tags[row2, k] == ev_line:
                            if dirty[row2, k] == 1:
                                wr = True
                            valid[row2, k] = 0
                            dirty[row2, k] = 0
                            break
            if wr:
                counters[_WR] += line_bytes
            return
        nl = cur_l + 1
        if nl == last and victim_mode == 1:
            cur_l = nl
            cur_line = ev_line
            cur_d = ev_d
            continue
        if ev_d == 0:
            return  # clean middle-level eviction is dropped
        cur_l = nl
        cur_line = ev_line
        cur_d = np.uint8(1)


@jit
def _flush_kernel(n_levels, sets, ways, base, tags, valid, dirty, counters, line_bytes):
    # inner->outer; flushing an inner dirty line cleans stale outer copies
    for l in range(n_levels):
        for row in range(base[l], base[l] + sets[l]):
            for k in range(ways[l]):
                if valid[row, k] == 1 and dirty[row, k] == 1:
                    counters[_WR] += line_bytes
                    dirty[row, k] = 0
                    ln = tags[row, k]
                    for ol in range(l + 1, n_levels):
                        row2 = base[ol] + ln % sets[ol]
                        for k2 in range(ways[ol]):
                            if valid[row2, k2] == 1 and tags[row2, k2] == ln:
                                dirty[row2, k2] = 0
                                break


class CacheHierarchy:
    """A built simulator instance.  Mutable; one instance per thread."""

    def __init__(self, configs):
        configs = tuple(configs)
        validate_hierarchy(configs)
        self.configs = configs
        self.line_size = configs[0].line_size
        self._line_shift = self.line_size.bit_length() - 1
        self.n_levels = len(configs)
        llc = configs[-1]
        self._victim_mode = np.uint8(
            1 if (llc.inclusion is InclusionMode.VICTIM_NONINCLUSIVE and self.n_levels > 1) else 0
        )

        self._sets = np.array([c.sets for c in configs], dtype=np.int64)
        self._ways = np.array([c.ways for c in configs], dtype=np.int64)
        self._base = np.zeros(self.n_levels, dtype=np.int64)
        np.cumsum(self._sets[:-1], out=self._base[1:])
        self._pol = np.array([_POL_CODE[c.policy] for c in configs], dtype=np.int8)

        total_sets = int(self._sets.sum())
        wmax = int(self._ways.max())
        self._tags = np.full((total_sets, wmax), -1, dtype=np.int64)
        self._valid = np.zeros((total_sets, wmax), dtype=np.uint8)
        self._dirty = np.zeros((total_sets, wmax), dtype=np.uint8)
        self._stamp = np.zeros((total_sets, wmax), dtype=np.int64)
        self._tbits = np.zeros((total_sets, max(wmax - 1, 1)), dtype=np.uint8)
        self._sbits = np.zeros((total_sets, max(wmax - 1, 1)), dtype=np.uint8)

        depth = max(2, int(np.ceil(np.log2(wmax))) + 1)
        L = self.n_levels
        self._tchild = np.zeros((L, max(wmax - 1, 1), 2), dtype=np.int32)
        self._tpnode = np.zeros((L, wmax, depth), dtype=np.int32)
        self._tpside = np.zeros((L, wmax, depth), dtype=np.uint8)
        self._tplen = np.zeros((L, wmax), dtype=np.int32)
        self._schild = np.zeros((L, max(wmax - 1, 1), 2), dtype=np.int32)
        self._spnode = np.zeros((L, wmax, depth), dtype=np.int32)
        self._spside = np.zeros((L, wmax, depth), dtype=np.uint8)
        self._splen = np.zeros((L, wmax), dtype=np.int32)
        for l, c in enumerate(configs):
            self._load_topology(l, list(range(c.ways)),
                                self._tchild, self._tpnode, self._tpside, self._tplen)
            if c.ways > 2:
                self._load_topology(l, list(range(1, c.ways)),
                                    self._schild, self._spnode, self._spside, self._splen)

        self._leader = np.zeros(total_sets, dtype=np.int8)
        psel_bits = 10
        for l, c in enumerate(configs):
            if c.policy is PolicyKind.ADAPTIVE_DUELING:
                psel_bits = c.dueling_counter_bits
                s = c.sets
                n_lead = max(1, min(c.dueling_leader_sets, s // 2))
                stride = s // n_lead
                for k in range(n_lead):
                    self._leader[int(self._base[l]) + k * stride] = 1
                    self._leader[int(self._base[l]) + k * stride + stride // 2] = 2
        self._psel_max = np.int64((1 << psel_bits) - 1)
        self._psel_threshold = np.int64(1 << (psel_bits - 1))
        self._psel = np.full(L, self._psel_threshold, dtype=np.int64)

        self._counters = np.zeros(_N_COUNTERS, dtype=np.int64)
        self._wc_lines = np.full(_WC_BUFFERS, -1, dtype=np.int64)

    def _load_topology(self, l, leaf_ways, child, pnode, pside, plen):
        children, paths = _build_tree(leaf_ways)
        for n, (a, b) in enumerate(children):
            child[l, n, 0] = a
            child[l, n, 1] = b
        for w, path in paths.items():
            plen[l, w] = len(path)
            for d, (node, side) in enumerate(path):
                pnode[l, w, d] = node
                pside[l, w, d] = side

    # -- simulation ------------------------------------------------------

    def _kernel_args(self, addrs, kinds, out, record):
        return (addrs, kinds, out, record,
                self.n_levels, self._line_shift, self._victim_mode,
                self._sets, self._ways, self._base, self._pol,
                self._tags, self._valid, self._dirty, self._stamp,
                self._tbits, self._sbits,
                self._tchild, self._tpnode, self._tpside, self._tplen,
                self._schild, self._spnode, self._spside, self._splen,
                self._leader, self._psel, self._psel_threshold, self._psel_max,
                self._counters, self._wc_lines)

    def run(self, addrs, kinds, record=False, _kernel=None):
        """Feed a batch of accesses.  Returns the per-access hit level
        (0-based; -1 = memory, -2 = NT bypass) when ``record`` is true.
        ``_kernel`` overrides the compiled kernel (testing/benchmarks)."""
        addrs = np.ascontiguousarray(addrs, dtype=np.uint64)
        if np.isscalar(kinds) or getattr(kinds, "ndim", 1) == 0:
            kinds = np.full(addrs.shape, int(kinds), dtype=np.uint8)
        else:
            kinds = np.ascontiguousarray(kinds, dtype=np.uint8)
        if addrs.shape != kinds.shape:
            raise ValueError("addrs and kinds must have equal length")
        out = np.empty(addrs.shape[0] if record else 1, dtype=np.int8)
        kernel = _kernel if _kernel is not None else _sim_kernel
        kernel(*self._kernel_args(addrs, kinds, out, record))
        return out if record else None

    def access(self, addr, kind=AccessKind.LOAD):
        """Single access; returns the level that hit (-1 memory, -2 NT)."""
        out = self.run(np.array([addr], dtype=np.uint64),
                       np.array([int(kind)], dtype=np.uint8), record=True)
        return int(out[0])

    def flush_dirty(self):
        """Write back every dirty line (lines stay valid, now clean)."""
        _flush_kernel(self.n_levels, self._sets, self._ways, self._base,
                      self._tags, self._valid, self._dirty, self._counters,
                      self.line_size)

    def reset_stats(self):
        self._counters[_H0:_WR + 1] = 0

    def reset(self):
        """Cold state: every line invalid, statistics zeroed."""
        self._tags[:] = -1
        self._valid[:] = 0
        self._dirty[:] = 0
        self._stamp[:] = 0
        self._tbits[:] = 0
        self._sbits[:] = 0
        self._counters[:] = 0
        self._psel[:] = self._psel_threshold
        self._wc_lines[:] = -1

    # -- inspection ------------------------------------------------------

    def report(self, work_count=None) -> TrafficReport:
        c = self._counters
        return TrafficReport(
            levels=tuple(cfg.level for cfg in self.configs),
            hits=tuple(int(c[_H0 + l]) for l in range(self.n_levels)),
            misses=tuple(int(c[_M0 + l]) for l in range(self.n_levels)),
            bytes_read_mem=int(c[_RD]),
            bytes_written_mem=int(c[_WR]),
            line_size=self.line_size,
            work_count=work_count,
        )

    def contents(self, level):
        """Set of line addresses currently valid at a level (for tests)."""
        lo = int(self._base[level])
        hi = lo + int(self._sets[level])
        w = int(self._ways[level])
        t = self._tags[lo:hi, :w]
        v = self._valid[lo:hi, :w]
        return set((t[v == 1] << self._line_shift).tolist())

    def set_lines(self, level, set_idx):
        """(tag, valid, dirty) tuples of one set, way order (for tests)."""
        row = int(self._base[level]) + set_idx
        w = int(self._ways[level])
        return [(int(self._tags[row, k]), int(self._valid[row, k]), int(self._dirty[row, k]))
                for k in range(w)]

    def victim_way(self, level, set_idx):
        """Way the replacement policy would evict next in this set."""
        row = int(self._base[level]) + set_idx
        p = _effective_policy(int(self._pol[level]), int(self._leader[row]),
                              int(self._psel[level]), int(self._psel_threshold))
        return int(_victim_way(self._valid, self._stamp, self._tbits, row,
                               int(self._ways[level]), p, self._tchild[level]))

    @property
    def selector_counters(self):
        """Per-level set-dueling selector values (only adaptive levels move)."""
        return tuple(int(x) for x in self._psel)


def build_hierarchy(configs) -> CacheHierarchy:
    """All-cold simulator for an L1->LLC config list."""
    return CacheHierarchy(configs)


def run_trace(h: CacheHierarchy, trace, work_count=None, flush=True) -> TrafficReport:
    """Run one trace and report its traffic.

    ``trace`` is anything with .addrs/.kinds/.work_count (see roofsim.traces)
    or an (addrs, kinds) pair.  With ``flush`` (default) dirty lines are
    written back at the end so store traffic is complete; pass False when
    accumulating several traces into one hierarchy.
    """
    if hasattr(trace, "addrs"):
        addrs, kinds = trace.addrs, trace.kinds
        if work_count is None:
            work_count = trace.work_count
    else:
        addrs, kinds = trace
    if len(addrs) == 0:
        raise ValueError("empty trace")
    h.run(addrs, kinds)
    if flush:
        h.flush_dirty()
    return h.report(work_count)


def hit_rate_curve(configs, ratios, passes=3, base_addr=0):
    """Steady-state last-level hit rate of a cyclic load-only stream.

    For each ratio the dataset is ratio x LLC capacity; the first pass warms
    the hierarchy and the remaining ``passes - 1`` are measured.
    """
    if passes < 2:
        raise ValueError("passes must be >= 2 (first pass warms the caches)")
    configs = tuple(configs)
    llc = configs[-1]
    out = []
    for ratio in ratios:
        if ratio <= 0:
            raise ValueError("size ratios must be positive")
        h = CacheHierarchy(configs)
        n_lines = max(1, round(ratio * llc.capacity / h.line_size))
        addrs = (np.arange(n_lines, dtype=np.uint64) * h.line_size) + np.uint64(base_addr)
        kinds = np.zeros(n_lines, dtype=np.uint8)
        h.run(addrs, kinds)
        h.reset_stats()
        for _ in range(passes - 1):
            h.run(addrs, kinds)
        out.append((ratio, h.report().llc_hit_rate))
    return out
