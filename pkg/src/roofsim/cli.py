"""Command-line front end.

Subcommands: ``model`` (analytic predictions), ``simulate`` (replacement
policy / hit-rate experiments), ``spmv-traffic`` (sparse traffic vs. the
LRU bound), ``hpcg`` (the mini solver, optionally validated against the
model) and ``time`` (best-effort wall-clock kernel timing; hardware
dependent, not part of any accuracy claim).

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import csv
import json
import statistics
import sys
import time as _time

import numpy as np

from . import hpcg, machine, sparse, traces
from .cachesim import (
    CacheHierarchy,
    GeometryError,
    PolicyKind,
    bdw_cache_configs,
    clx_cache_configs,
    curve_cache_configs,
    hit_rate_curve,
    run_trace,
)
from .machine import KernelKind, ModelError


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_output(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def _emit(args, human_lines, json_obj, csv_text=None):
    print("\n".join(human_lines))
    if getattr(args, "json", None):
        _write_output(args.json, json.dumps(json_obj, indent=2) + "\n")
    if getattr(args, "csv", None):
        if csv_text is None:
            raise UsageError("this command has no CSV form")
        _write_output(args.csv, csv_text)


def _get_machine(args) -> machine.MachineModel:
    if getattr(args, "machine_file", None):
        return machine.load_machine_file(args.machine_file)
    return machine.get_machine(args.machine)


def _cache_configs(args):
    name = getattr(args, "machine", None) or "clx"
    if name == "bdw":
        cfgs = bdw_cache_configs(scale=args.scale)
    elif name == "clx":
        cfgs = clx_cache_configs(scale=args.scale)
    else:
        raise UsageError(f"unknown machine {name!r} for cache presets")
    return cfgs


def _override_llc_policy(cfgs, policy_name):
    if policy_name is None:
        return cfgs
    pol = PolicyKind(policy_name)
    return tuple(list(cfgs[:-1]) + [cfgs[-1].with_policy(pol)])


# ---------------------------------------------------------------------------
# model

_KERNEL_CHOICES = {
    "dot": KernelKind.DOT_HPCG_AVG,
    "waxpby": KernelKind.WAXPBY,
    "spmv": KernelKind.SPMV,
    "symgs": KernelKind.SYMGS_SWEEP,
    "mg": KernelKind.MG_FINEST,
    "triad": KernelKind.STREAM_TRIAD,
    "spmpv-bound": KernelKind.SPMPV_PER_NNZ,
}

_HPCG_FLOPS = {"dot": 2.0, "waxpby": 2.0}


def cmd_model(args):
    mach = _get_machine(args)
    if args.golden_table3:
        return _model_golden(args)
    if args.peak:
        peak = mach.peak_gflops
        _emit(args, [f"{mach.name}: peak = {mach.cores} cores x {mach.freq_ghz} GHz x "
                     f"{mach.flops_per_cycle_per_core} flops/cy = {peak:.1f} GF/s"],
              {"machine": mach.name, "peak_gflops": peak})
        return 0
    if args.efficiency:
        return _model_efficiency(args)
    if args.kernels_file:
        kernels = machine.load_kernels_file(args.kernels_file)
        return _model_predict(args, mach, kernels)
    if args.hpcg:
        kernels = machine.hpcg_kernel_models(nnzr=args.nnzr)
        return _model_predict(args, mach, kernels)
    if args.kernel:
        kind = _KERNEL_CHOICES[args.kernel]
        needs_nnzr = kind in (KernelKind.SPMV, KernelKind.SYMGS_SWEEP,
                              KernelKind.MG_FINEST, KernelKind.SPMPV_PER_NNZ)
        cb = machine.code_balance(kind, nnzr=args.nnzr if needs_nnzr else None,
                                  nt=not args.no_nt)
        if kind is KernelKind.SPMPV_PER_NNZ:
            _emit(args, [f"{args.kernel}: minimum traffic = {cb:.3f} B/nnz "
                         f"(nnzr={args.nnzr:g})"],
                  {"kernel": args.kernel, "bytes_per_nnz": cb, "nnzr": args.nnzr})
            return 0
        if kind in (KernelKind.SPMV, KernelKind.MG_FINEST):
            flops = (2.0 if kind is KernelKind.SPMV else 10.0) * args.nnzr
        elif kind is KernelKind.SYMGS_SWEEP:
            flops = 2.0 * args.nnzr
        elif kind is KernelKind.STREAM_TRIAD:
            flops = 2.0
        else:
            flops = _HPCG_FLOPS[args.kernel]
        model = machine.KernelModel(args.kernel, cb, flops)
        pred = machine.roofline_perf(model, mach)
        unit = "B/iter" if kind is KernelKind.STREAM_TRIAD else "B/row"
        _emit(args,
              [f"{args.kernel} on {mach.name}: code balance {cb:.2f} {unit}, "
               f"roofline {pred.perf_gflops:.2f} GF/s (b_s = {mach.bw_load_only:g} GB/s)"],
              {"machine": mach.name, "kernel": args.kernel, "code_balance": cb,
               "perf_gflops": pred.perf_gflops})
        return 0
    raise UsageError("model: nothing to do (use --kernel/--hpcg/--peak/"
                     "--golden-table3/--efficiency)")


def _model_predict(args, mach, kernels):
    comp = machine.hpcg_composite(kernels, mach)
    lines = [f"machine {mach.name} (b_s = {mach.bw_load_only:g} GB/s)"]
    lines.append(f"{'kernel':<10}{'C_x [B/row]':>14}{'P_x [GF/s]':>14}{'time share':>12}")
    shares = dict(comp.per_kernel_breakdown)
    for k in kernels:
        pred = machine.roofline_perf(k, mach)
        lines.append(f"{k.name:<10}{k.code_balance:>14.2f}{pred.perf_gflops:>14.2f}"
                     f"{shares[k.name]:>12.3f}")
    lines.append(f"composite: {comp.perf_gflops:.2f} GF/s")
    _emit(args, lines, machine.predictions_to_dict(kernels, mach),
          machine.predictions_to_csv(kernels, mach))
    return 0


def _model_golden(args):
    lines = []
    obj = {}
    csv_buf = ["machine,kernel,code_balance,perf_gflops,time_share"]
    for name in ("bdw", "clx"):
        mach = machine.get_machine(name)
        kernels = machine.hpcg_kernel_models()
        comp = machine.hpcg_composite(kernels, mach)
        shares = dict(comp.per_kernel_breakdown)
        lines.append(f"{name}: composite {comp.perf_gflops:.2f} GF/s")
        for k in kernels:
            p = machine.roofline_perf(k, mach)
            lines.append(f"  {k.name:<8} C={k.code_balance:8.2f} B/row   "
                         f"P={p.perf_gflops:6.2f} GF/s")
            csv_buf.append(f"{name},{k.name},{k.code_balance:.2f},"
                           f"{p.perf_gflops:.4f},{shares[k.name]:.6f}")
        csv_buf.append(f"{name},composite,,{comp.perf_gflops:.4f},1.000000")
        obj[name] = machine.predictions_to_dict(kernels, mach)
    _emit(args, lines, obj, "\n".join(csv_buf) + "\n")
    return 0


def _model_efficiency(args):
    pts = []
    with open(args.efficiency) as f:
        for row in csv.reader(f):
            if not row or not row[0].strip() or not row[0].strip()[0].isdigit():
                continue
            pts.append((int(row[0]), float(row[1])))
    try:
        rep = machine.parallel_efficiency(machine.ScalingSeries(tuple(pts)))
    except ModelError as e:
        raise DataError(str(e)) from e
    lines = [f"parallel efficiency at {rep.per_point[-1][0]} cores: {rep.efficiency:.3f}"]
    for c, e in rep.per_point:
        lines.append(f"  {c:>4} cores: {e:.3f}")
    _emit(args, lines,
          {"efficiency": rep.efficiency,
           "per_point": [{"cores": c, "efficiency": e} for c, e in rep.per_point]})
    return 0


# ---------------------------------------------------------------------------
# simulate

def _parse_ratios(spec):
    out = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = (float(x) for x in part.split("..", 1))
            if lo <= 0 or hi <= lo:
                raise UsageError(f"bad ratio range {part!r}")
            out.extend(np.geomspace(lo, hi, 8).round(4).tolist())
        elif part:
            out.append(float(part))
    if not out:
        raise UsageError("no size ratios given")
    return out


def cmd_simulate(args):
    if args.cache_file:
        cfgs = machine.load_machine_file(args.cache_file).cache_levels
        if not cfgs:
            raise DataError(f"{args.cache_file}: no [[cache]] tables")
    elif args.machine:
        cfgs = _cache_configs(args)
    else:
        cfgs = curve_cache_configs()
    cfgs = _override_llc_policy(cfgs, args.policy)

    if args.trace:
        try:
            t = traces.Trace.load(args.trace, work_count=args.work_count)
        except (OSError, ValueError) as e:
            raise DataError(str(e)) from e
        h = CacheHierarchy(cfgs)
        rep = run_trace(h, t)
        _emit(args, [f"trace {args.trace}: {len(t)} accesses",
                     rep.to_csv().rstrip()], rep.to_dict(), rep.to_csv())
        return 0

    if args.pattern == "random":
        llc = cfgs[-1].capacity
        t = traces.gen_random_trace(args.accesses, int(args.ratio * llc), seed=args.seed)
        h = CacheHierarchy(cfgs)
        rep = run_trace(h, t)
        _emit(args, [f"random pattern over {args.ratio:g}x LLC:",
                     rep.to_csv().rstrip()], rep.to_dict(), rep.to_csv())
        return 0

    if args.ratios:
        ratios = _parse_ratios(args.ratios)
    elif args.ratio is not None:
        ratios = [args.ratio]
    else:
        raise UsageError("need --ratio or --ratios")
    curve = hit_rate_curve(cfgs, ratios, passes=args.passes)
    pol = cfgs[-1].policy.value
    lines = [f"LLC hit-rate curve ({pol}, {cfgs[-1].capacity} B, "
             f"{cfgs[-1].ways} ways, {args.passes} passes)"]
    lines += [f"  ratio {r:6.2f}: {rate * 100:6.2f} %" for r, rate in curve]
    csv_text = "ratio,llc_hit_rate\n" + "".join(
        f"{r:.4f},{rate:.6f}\n" for r, rate in curve)
    _emit(args, lines,
          {"policy": pol, "passes": args.passes,
           "curve": [{"ratio": r, "llc_hit_rate": rate} for r, rate in curve]},
          csv_text)
    return 0


# ---------------------------------------------------------------------------
# spmv-traffic

def cmd_spmv_traffic(args):
    if args.bound_only:
        if not args.nnzr:
            raise UsageError("--bound-only needs --nnzr")
        bound = sparse.min_spmv_traffic(args.nnzr)
        _emit(args, [f"LRU-model traffic bound at nnzr={args.nnzr:g}: {bound:.3f} B/nnz"],
              {"nnzr": args.nnzr, "bound_bytes_per_nnz": bound})
        return 0
    if not args.matrix:
        raise UsageError("need a MatrixMarket file (or --bound-only --nnzr N)")
    try:
        m = sparse.load_matrix_market(args.matrix)
    except sparse.MatrixMarketError as e:
        raise DataError(str(e)) from e
    if args.rcm:
        m, _ = sparse.rcm_permute(m)
    cfgs = _cache_configs(args)
    t = sparse.spmpv_trace(m, args.power)
    h = CacheHierarchy(cfgs)
    rep = run_trace(h, t)
    bound = sparse.min_spmv_traffic(m.n_nzr)
    bpn = rep.bytes_per_work
    lines = [
        f"{args.matrix}: N_r={m.n_rows} N_nz={m.n_nz} nnzr={m.n_nzr:.1f}"
        + (" (RCM)" if args.rcm else ""),
        f"SpMPV p={args.power}: {bpn:.3f} B/nnz simulated, "
        f"bound {bound:.3f} B/nnz, ratio {bpn / bound:.3f}",
    ]
    obj = {"matrix": args.matrix, "n_rows": m.n_rows, "n_nz": m.n_nz,
           "nnzr": m.n_nzr, "rcm": bool(args.rcm), "power": args.power,
           "bytes_per_nnz": bpn, "bound_bytes_per_nnz": bound,
           "bound_ratio": bpn / bound, "traffic": rep.to_dict()}
    csv_text = ("matrix,n_rows,n_nz,nnzr,power,bytes_per_nnz,bound,ratio\n"
                f"{args.matrix},{m.n_rows},{m.n_nz},{m.n_nzr:.4f},{args.power},"
                f"{bpn:.4f},{bound:.4f},{bpn / bound:.4f}\n")
    _emit(args, lines, obj, csv_text)
    return 0


# ---------------------------------------------------------------------------
# hpcg

def cmd_hpcg(args):
    try:
        levels = hpcg.build_mg_levels(args.size, args.size, args.size, depth=args.depth)
    except ValueError as e:
        raise DataError(str(e)) from e
    n = levels[0].matrix.n_rows
    rng = np.random.default_rng(args.seed)
    b = rng.standard_normal(n) if args.random_rhs else np.ones(n)
    res = hpcg.cg_solve(levels, b, max_iter=args.iters, tol=args.tol)
    acct = res.accounting
    lines = [
        f"{args.size}^3 stencil, depth {args.depth}: {res.iterations} iterations, "
        f"relative residual {res.residuals[-1]:.3e} "
        f"(drop {res.residual_drop:.1e})",
    ]
    per_iter = acct.calls_per_iteration()[0] if acct.calls_per_iteration() else {}
    lines.append(f"per-iteration calls: {per_iter}")
    for name in ("dot", "waxpby", "spmv", "mg"):
        bkt = acct.buckets.get(name)
        if bkt:
            lines.append(f"  {name:<8} flops/row {bkt.flops_per_row:8.2f}  calls {bkt.calls}")
    obj = {"size": args.size, "depth": args.depth, "iterations": res.iterations,
           "residuals": res.residuals, "accounting": acct.summary()}

    if args.validate:
        mach = _get_machine(args)
        cfgs = _cache_configs(args)
        hpcg.measure_kernel_traffic(levels[0].matrix, cfgs, acct=acct)
        report = hpcg.validate_against_model(acct, mach)
        lines.append(f"traffic validation vs {mach.name} model "
                     f"(caches scaled 1/{args.scale}):")
        for r in report.rows:
            flag = "  <-- flagged" if r.flagged else ""
            lines.append(f"  {r.kernel:<8} measured {r.measured_bytes_per_row:8.2f} "
                         f"predicted {r.predicted_bytes_per_row:8.2f} B/row "
                         f"({r.deviation * 100:+.1f} %){flag}")
        lines.append(f"  composite: model {report.composite_predicted_gflops:.2f} GF/s, "
                     f"from measured traffic {report.composite_from_measured_gflops:.2f} GF/s")
        obj["validation"] = report.to_dict()

    csv_text = "iteration,relative_residual\n" + "".join(
        f"{i},{r:.6e}\n" for i, r in enumerate(res.residuals))
    _emit(args, lines, obj, csv_text)
    return 0


# ---------------------------------------------------------------------------
# time

def cmd_time(args):
    kind = traces.StreamKernelKind(args.kernel)
    arrays = traces.alloc_stream_arrays(kind, args.n)
    traces.run_stream_kernel(kind, arrays)  # warm up (and JIT-compile)
    reps = []
    t_total = 0.0
    while t_total < args.min_seconds or len(reps) < 3:
        t0 = _time.perf_counter()
        traces.run_stream_kernel(kind, arrays)
        dt = _time.perf_counter() - t0
        reps.append(dt)
        t_total += dt
    med = statistics.median(reps)
    spread = (max(reps) - min(reps)) / med if med else 0.0
    nt_bytes, wa_bytes = traces.STREAM_BYTES_PER_ITER[kind]
    lines = [
        f"{kind.value}: n={args.n}, {len(reps)} reps, median {med * 1e3:.2f} ms "
        f"(spread {spread * 100:.0f} %)",
        f"  bandwidth, cache-bypassing stores assumed ({nt_bytes} B/iter): "
        f"{args.n * nt_bytes / med / 1e9:.2f} GB/s",
    ]
    if wa_bytes != nt_bytes:
        lines.append(
            f"  bandwidth, write-allocate assumed ({wa_bytes} B/iter): "
            f"{args.n * wa_bytes / med / 1e9:.2f} GB/s")
    lines.append("  (best-effort wall-clock numbers; depend on this host)")
    _emit(args, lines,
          {"kernel": kind.value, "n": args.n, "reps": len(reps),
           "median_seconds": med, "spread": spread,
           "gbs_nt": args.n * nt_bytes / med / 1e9,
           "gbs_write_allocate": args.n * wa_bytes / med / 1e9})
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="roofsim",
                description="Roofline/code-balance models and cache-replacement simulation")
    sub = p.add_subparsers(dest="command", required=True)

    def add_out(sp):
        sp.add_argument("--json", metavar="PATH", help="write JSON ('-' = stdout)")
        sp.add_argument("--csv", metavar="PATH", help="write CSV ('-' = stdout)")

    mp = sub.add_parser("model", help="analytic roofline predictions")
    mp.add_argument("--machine", default="clx", help="preset name (bdw, clx)")
    mp.add_argument("--machine-file", help="machine descriptor TOML")
    mp.add_argument("--kernel", choices=sorted(_KERNEL_CHOICES))
    mp.add_argument("--nnzr", type=float, default=27.0, help="nonzeros per row")
    mp.add_argument("--no-nt", action="store_true",
                    help="triad balance with write-allocate stores")
    mp.add_argument("--hpcg", action="store_true", help="composite solver model")
    mp.add_argument("--golden-table3", action="store_true",
                    help="full prediction set for both presets")
    mp.add_argument("--peak", action="store_true", help="peak GF/s of the machine")
    mp.add_argument("--kernels-file", help="kernel models TOML")
    mp.add_argument("--efficiency", metavar="CSV",
                    help="parallel efficiency of a cores,value series")
    add_out(mp)
    mp.set_defaults(func=cmd_model)

    sp = sub.add_parser("simulate", help="cache hierarchy simulation")
    sp.add_argument("--machine", help="cache preset (bdw, clx)")
    sp.add_argument("--cache-file", help="machine TOML with [[cache]] tables")
    sp.add_argument("--policy", choices=[k.value for k in PolicyKind],
                    help="override last-level policy")
    sp.add_argument("--scale", type=int, default=1, help="shrink preset sets by N")
    sp.add_argument("--pattern", choices=["load", "random"], default="load")
    sp.add_argument("--ratio", type=float, help="dataset / LLC capacity")
    sp.add_argument("--ratios", help="comma list and lo..hi ranges")
    sp.add_argument("--passes", type=int, default=3)
    sp.add_argument("--accesses", type=int, default=200_000,
                    help="accesses for --pattern random")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trace", help="binary trace file to run")
    sp.add_argument("--work-count", type=int, help="work units in --trace")
    add_out(sp)
    sp.set_defaults(func=cmd_simulate)

    tp = sub.add_parser("spmv-traffic", help="sparse kernel traffic vs. LRU bound")
    tp.add_argument("matrix", nargs="?", help="MatrixMarket file")
    tp.add_argument("--machine", default="clx")
    tp.add_argument("--scale", type=int, default=1)
    tp.add_argument("--rcm", action="store_true", help="RCM-reorder first")
    tp.add_argument("--power", type=int, default=4, help="SpMPV power p")
    tp.add_argument("--bound-only", action="store_true")
    tp.add_argument("--nnzr", type=float)
    add_out(tp)
    tp.set_defaults(func=cmd_spmv_traffic)

    hp = sub.add_parser("hpcg", help="HPCG-style CG mini solver")
    hp.add_argument("--size", type=int, default=64, help="cubic grid size")
    hp.add_argument("--iters", type=int, default=25)
    hp.add_argument("--depth", type=int, default=4, help="multigrid depth")
    hp.add_argument("--tol", type=float, default=0.0)
    hp.add_argument("--validate", action="store_true",
                    help="simulate kernel traffic and compare with the model")
    hp.add_argument("--machine", default="clx")
    hp.add_argument("--scale", type=int, default=8,
                    help="cache shrink factor for --validate")
    hp.add_argument("--random-rhs", action="store_true")
    hp.add_argument("--seed", type=int, default=0)
    add_out(hp)
    hp.set_defaults(func=cmd_hpcg)

    wp = sub.add_parser("time", help="wall-clock kernel timing (best effort)")
    wp.add_argument("--kernel", choices=[k.value for k in traces.StreamKernelKind],
                    default="triad")
    wp.add_argument("--n", type=int, default=10_000_000, help="elements")
    wp.add_argument("--min-seconds", type=float, default=1.0)
    add_out(wp)
    wp.set_defaults(func=cmd_time)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataError, ModelError, GeometryError, sparse.MatrixMarketError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
