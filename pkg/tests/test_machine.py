import json
import math

import pytest
from hypothesis import given, strategies as st

from roofsim.machine import (
    KernelKind,
    KernelModel,
    MachineModel,
    ModelError,
    ScalingSeries,
    bandwidth_from_bytes_per_cycle,
    code_balance,
    crs_footprint,
    get_machine,
    hpcg_composite,
    hpcg_kernel_models,
    load_kernels_file,
    load_machine_file,
    parallel_efficiency,
    peak_flops,
    predictions_to_csv,
    predictions_to_dict,
    roofline_perf,
    stream_corrected_bandwidth,
)

MIB = 1024 * 1024


class TestConversions:
    def test_l1_clx_published_value(self):
        assert bandwidth_from_bytes_per_cycle(128, 1.6) == pytest.approx(204.8, abs=1e-12)

    def test_unit_frequency(self):
        assert bandwidth_from_bytes_per_cycle(64, 1.0) == 64

    def test_linearity(self):
        assert bandwidth_from_bytes_per_cycle(32, 2.0) == 64

    def test_rejects_nonpositive(self):
        with pytest.raises(ModelError):
            bandwidth_from_bytes_per_cycle(0, 1.0)
        with pytest.raises(ModelError):
            bandwidth_from_bytes_per_cycle(64, -1.0)


class TestPeak:
    def test_clx_dgemm_limit(self):
        assert peak_flops(20, 2.09, 32) == 1337.6

    def test_unit(self):
        assert peak_flops(1, 1.0, 1) == 1.0

    def test_independent_arithmetic(self):
        # cross-check by summing per-core rates
        total = math.fsum(2.0 * 16 for _ in range(18))
        assert peak_flops(18, 2.0, 16) == pytest.approx(total, rel=1e-15) == 576

    def test_rejects_nonpositive(self):
        with pytest.raises(ModelError):
            peak_flops(0, 2.0, 16)


class TestCodeBalance:
    def test_dot_two_decimals(self):
        assert code_balance(KernelKind.DOT_HPCG_AVG) == pytest.approx(13.30, abs=0.01)

    def test_waxpby(self):
        assert code_balance(KernelKind.WAXPBY) == 24.0

    def test_spmv_27(self):
        assert code_balance(KernelKind.SPMV, nnzr=27) == pytest.approx(352.00, abs=0.01)

    def test_mg_27(self):
        assert code_balance(KernelKind.MG_FINEST, nnzr=27) == pytest.approx(1760.00, abs=0.01)

    def test_symgs_equals_spmv(self):
        assert code_balance(KernelKind.SYMGS_SWEEP, nnzr=31) == code_balance(
            KernelKind.SPMV, nnzr=31)

    def test_triad(self):
        assert code_balance(KernelKind.STREAM_TRIAD, nt=True) == 24
        assert code_balance(KernelKind.STREAM_TRIAD, nt=False) == 32

    def test_spmpv_per_nnz(self):
        assert code_balance(KernelKind.SPMPV_PER_NNZ, nnzr=52) == pytest.approx(
            12 + 28 / 52, rel=1e-15)

    def test_wide_index_knob(self):
        assert code_balance(KernelKind.SPMV, nnzr=10, index_bytes=8) == 16 * 10 + 32

    @given(st.integers(min_value=1, max_value=10_000))
    def test_mg_is_five_spmv(self, n):
        assert code_balance(KernelKind.MG_FINEST, nnzr=n) == pytest.approx(
            5 * code_balance(KernelKind.SPMV, nnzr=n), rel=1e-15)

    @given(st.floats(min_value=1, max_value=1e9, allow_nan=False))
    def test_spmpv_monotone_to_12(self, n):
        v = code_balance(KernelKind.SPMPV_PER_NNZ, nnzr=n)
        assert v >= 12
        assert code_balance(KernelKind.SPMPV_PER_NNZ, nnzr=n + 1) <= v

    def test_requires_nnzr(self):
        with pytest.raises(ModelError):
            code_balance(KernelKind.SPMV)
        with pytest.raises(ModelError):
            code_balance(KernelKind.SPMV, nnzr=0.5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            code_balance("no-such-kernel")


class TestRoofline:
    def test_dot_bdw(self):
        pred = roofline_perf(KernelModel("DOT", 13.30, 2), get_machine("bdw"))
        assert pred.perf_gflops == pytest.approx(10.23, abs=0.01)

    def test_spmv_clx(self):
        pred = roofline_perf(KernelModel("SpMV", 352.0, 54), get_machine("clx"))
        assert pred.perf_gflops == pytest.approx(17.64, abs=0.01)

    def test_zero_flops_zero_perf(self):
        pred = roofline_perf(KernelModel("noflops", 16.0, 0), get_machine("clx"))
        assert pred.perf_gflops == 0.0

    def test_perf_identity(self):
        m = get_machine("clx")
        k = KernelModel("k", 100.0, 7)
        assert roofline_perf(k, m).perf_gflops == 7 * m.bw_load_only / 100.0


def _machine_with_bs(bs):
    return MachineModel(name="x", cores=4, freq_ghz=2.0, flops_per_cycle_per_core=8,
                        bw_load_only=bs, theoretical_mem_bw=bs * 2, l1_bytes_per_cycle=64)


class TestComposite:
    def test_bdw_golden(self):
        comp = hpcg_composite(hpcg_kernel_models(), get_machine("bdw"))
        assert comp.perf_gflops == pytest.approx(10.27, abs=0.01)

    def test_clx_golden(self):
        comp = hpcg_composite(hpcg_kernel_models(), get_machine("clx"))
        assert comp.perf_gflops == pytest.approx(17.37, abs=0.01)

    def test_single_kernel_equals_roofline(self):
        m = get_machine("clx")
        k = KernelModel("solo", 48.0, 6, calls=4)
        comp = hpcg_composite([k], m)
        assert comp.perf_gflops == pytest.approx(
            roofline_perf(k, m).perf_gflops, rel=1e-14)

    def test_nr_cancellation_bit_identical(self):
        m = get_machine("bdw")
        a = hpcg_composite(hpcg_kernel_models(), m, n_rows=1)
        b = hpcg_composite(hpcg_kernel_models(), m, n_rows=10**6)
        assert a.perf_gflops == b.perf_gflops  # exactly

    def test_time_and_flops_consistent(self):
        comp = hpcg_composite(hpcg_kernel_models(), get_machine("clx"), n_rows=160**3)
        assert comp.total_flops / comp.total_time == pytest.approx(
            comp.perf_gflops * 1e9, rel=1e-12)
        assert sum(s for _, s in comp.per_kernel_breakdown) == pytest.approx(1.0, rel=1e-12)

    def test_empty_list_rejected(self):
        with pytest.raises(ModelError):
            hpcg_composite([], get_machine("clx"))

    @given(st.lists(st.tuples(st.floats(8, 4000), st.floats(0.5, 300),
                              st.integers(1, 5)), min_size=1, max_size=6))
    def test_weighted_harmonic_bounds(self, specs):
        m = _machine_with_bs(100.0)
        kernels = [KernelModel(f"k{i}", cb, f, calls=c)
                   for i, (cb, f, c) in enumerate(specs)]
        perfs = [roofline_perf(k, m).perf_gflops for k in kernels]
        comp = hpcg_composite(kernels, m)
        assert min(perfs) - 1e-9 <= comp.perf_gflops <= max(perfs) + 1e-9

    @given(st.floats(min_value=0.1, max_value=64.0))
    def test_roofline_homogeneity(self, k):
        kernels = hpcg_kernel_models()
        m1 = _machine_with_bs(50.0)
        m2 = _machine_with_bs(50.0 * k)
        c1 = hpcg_composite(kernels, m1)
        c2 = hpcg_composite(kernels, m2)
        assert c2.perf_gflops == pytest.approx(c1.perf_gflops * k, rel=1e-12)
        for (n1, s1), (n2, s2) in zip(c1.per_kernel_breakdown, c2.per_kernel_breakdown):
            assert n1 == n2
            assert s2 == pytest.approx(s1, rel=1e-12)


class TestTable3Golden:
    """All eight predicted code balances and performances to +-0.01."""

    EXPECTED = {
        "bdw": {"DOT": 10.23, "WAXPBY": 5.67, "SpMV": 10.43, "MG": 10.43},
        "clx": {"DOT": 17.29, "WAXPBY": 9.58, "SpMV": 17.64, "MG": 17.64},
    }
    BALANCES = {"DOT": 13.30, "WAXPBY": 24.00, "SpMV": 352.00, "MG": 1760.00}

    @pytest.mark.parametrize("preset", ["bdw", "clx"])
    def test_predictions(self, preset):
        m = get_machine(preset)
        for k in hpcg_kernel_models():
            assert k.code_balance == pytest.approx(self.BALANCES[k.name], abs=0.01)
            assert roofline_perf(k, m).perf_gflops == pytest.approx(
                self.EXPECTED[preset][k.name], abs=0.01)


class TestStreamCorrection:
    def test_write_allocate_uplift(self):
        assert stream_corrected_bandwidth(60.0, nt_used=False) == pytest.approx(80.0)

    def test_nt_identity(self):
        assert stream_corrected_bandwidth(80.0, nt_used=True) == 80.0

    def test_ratio_is_four_thirds(self):
        # equal interface bandwidth => reported NT/noNT performance ratio 4/3
        interface = 96.0
        reported_nt = interface
        reported_nont = interface * 24 / 32
        assert reported_nt / reported_nont == 4 / 3

    def test_rejects_nonpositive(self):
        with pytest.raises(ModelError):
            stream_corrected_bandwidth(0.0, True)


class TestParallelEfficiency:
    def test_perfectly_linear(self):
        s = ScalingSeries(tuple((n, 10.0 * n) for n in (1, 2, 4, 8, 18)))
        assert parallel_efficiency(s).efficiency == pytest.approx(1.0)

    def test_constructed_ninety_percent(self):
        s = ScalingSeries(((1, 10.0), (18, 0.9 * 18 * 10.0)))
        assert parallel_efficiency(s).efficiency == pytest.approx(0.9)

    def test_saturating_series_like_mesh_llc(self):
        # saturating curve: value(n) = 70 * n / (n + 9); eps(20) ~ 0.70 at v(1)/10
        pts = tuple((n, 70.0 * n / (n + 9) / (70.0 / 10)) for n in (1, 2, 5, 10, 20))
        rep = parallel_efficiency(ScalingSeries(pts))
        assert rep.efficiency == pytest.approx(10 / 29, rel=1e-12)
        assert [e for _, e in rep.per_point] == sorted(
            (e for _, e in rep.per_point), reverse=True)

    def test_missing_single_core_point(self):
        with pytest.raises(ModelError):
            parallel_efficiency(ScalingSeries(((2, 5.0), (4, 9.0))))

    def test_invalid_series(self):
        with pytest.raises(ModelError):
            ScalingSeries(((1, 1.0), (1, 2.0)))
        with pytest.raises(ModelError):
            ScalingSeries(((1, 1.0), (2, -2.0)))


class TestFootprint:
    @pytest.mark.parametrize("nr,nnz,published_mb", [
        (52329, 2698463, 32),       # ct20stif
        (217918, 11634424, 134),    # pwtk
    ])
    def test_published_sizes_within_5pct(self, nr, nnz, published_mb):
        got = crs_footprint(nr, nnz, n_vectors=2) / MIB
        assert got == pytest.approx(published_mb, rel=0.05)

    def test_minimal(self):
        assert crs_footprint(1, 1, n_vectors=0) == 20

    def test_formula(self):
        assert crs_footprint(10, 40, n_vectors=3) == 12 * 40 + 4 * 11 + 8 * 3 * 10

    def test_rejects_empty(self):
        with pytest.raises(ModelError):
            crs_footprint(0, 5)


class TestPresets:
    @pytest.mark.parametrize("name", ["bdw", "clx"])
    def test_invariants(self, name):
        m = get_machine(name)
        assert m.bw_load_only <= m.theoretical_mem_bw
        # B/cy x GHz identity for the L1 rate
        assert m.l1_bandwidth == m.l1_bytes_per_cycle * m.freq_ghz
        assert len(m.cache_levels) == 3

    def test_bs_values(self):
        assert get_machine("bdw").bw_load_only == 68.0
        assert get_machine("clx").bw_load_only == 115.0

    def test_clx_peak(self):
        assert get_machine("clx").peak_gflops == 1337.6

    def test_unknown(self):
        with pytest.raises(ModelError):
            get_machine("sandybridge")

    def test_invalid_machine_rejected(self):
        with pytest.raises(ModelError):
            MachineModel(name="bad", cores=4, freq_ghz=2.0, flops_per_cycle_per_core=8,
                         bw_load_only=200.0, theoretical_mem_bw=100.0,
                         l1_bytes_per_cycle=64)


MACHINE_TOML = """
name = "custom"
cores = 8
freq_ghz = 2.5
flops_per_cycle_per_core = 16
bw_load_only = 80.0
theoretical_mem_bw = 100.0
l1_bytes_per_cycle = 64

[[cache]]
level = "L1"
capacity = 32768
ways = 8

[[cache]]
level = "L2"
capacity = 262144
ways = 8
policy = "true-lru"

[[cache]]
level = "L3"
capacity = 1048576
ways = 16
inclusion = "victim"
policy = "stream-one-way"
"""

KERNELS_TOML = """
[[kernel]]
name = "stream"
code_balance = 24.0
flops_per_row = 2.0
calls = 2

[[kernel]]
name = "spmv"
code_balance = 352.0
flops_per_row = 54.0
"""


class TestConfigFiles:
    def test_machine_roundtrip(self, tmp_path):
        p = tmp_path / "m.toml"
        p.write_text(MACHINE_TOML)
        m = load_machine_file(p)
        assert m.name == "custom"
        assert m.bw_load_only == 80.0
        assert [c.level for c in m.cache_levels] == ["L1", "L2", "L3"]
        assert m.cache_levels[2].inclusion.value == "victim"
        assert m.cache_levels[2].policy.value == "stream-one-way"

    def test_machine_missing_key(self, tmp_path):
        p = tmp_path / "m.toml"
        p.write_text("name = 'x'\ncores = 2\n")
        with pytest.raises(ModelError):
            load_machine_file(p)

    def test_kernels_file(self, tmp_path):
        p = tmp_path / "k.toml"
        p.write_text(KERNELS_TOML)
        ks = load_kernels_file(p)
        assert [k.name for k in ks] == ["stream", "spmv"]
        assert ks[0].calls == 2

    def test_preset_dir_override(self, tmp_path, monkeypatch):
        (tmp_path / "clx.toml").write_text(MACHINE_TOML)
        monkeypatch.setenv("ROOFSIM_PRESET_DIR", str(tmp_path))
        assert get_machine("clx").name == "custom"


class TestEmission:
    def test_csv_schema(self):
        csv_text = predictions_to_csv(hpcg_kernel_models(), get_machine("clx"))
        lines = csv_text.strip().splitlines()
        assert lines[0] == "kernel,code_balance,perf_gflops,time_share"
        assert lines[1].startswith("DOT,13.3000,")
        assert lines[-1].startswith("composite,")

    def test_json_roundtrip(self):
        d = predictions_to_dict(hpcg_kernel_models(), get_machine("bdw"))
        d2 = json.loads(json.dumps(d))
        assert d2["composite_gflops"] == pytest.approx(10.27, abs=0.01)
        assert {k["name"] for k in d2["kernels"]} == {"DOT", "WAXPBY", "SpMV", "MG"}
