"""Cost model against the reference complexity figures, plus profiler plumbing.

Reference points (64x64x64 and 64x256x256 inputs, D = Dv = 2Dk = 64): dot
needs ~3e9 ops / 69 MB at N=4096 and ~829e9 ops / 17 GB at N=65536; kernel
needs ~3.7e7 ops / ~3 MB at N=4096. Headline ratios: ~89x ops and ~21x bytes
at N=4096, ~1417x ops and ~340x bytes at N=65536.
"""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from linattn import bench
from linattn.errors import ConfigurationError, ContractError, NumericError

N1, N2 = 4096, 65536
DK, DV = 32, 64


class TestAnalyticOps:
    def test_dot_matches_3G_at_4096(self):
        ops_count = bench.analytic_ops("dot", N1, DK, DV)
        assert abs(ops_count - 3e9) / 3e9 <= 0.10

    def test_kernel_matches_37M_at_4096(self):
        ops_count = bench.analytic_ops("kernel", N1, DK, DV)
        assert abs(ops_count - 3.7e7) / 3.7e7 <= 0.15

    def test_dot_matches_829G_at_65536(self):
        ops_count = bench.analytic_ops("dot", N2, DK, DV)
        assert 8.25e11 <= ops_count <= 8.4e11
        assert abs(ops_count - 829e9) / 829e9 <= 0.05

    def test_op_ratio_at_4096(self):
        ratio = bench.analytic_ops("dot", N1, DK, DV) / bench.analytic_ops("kernel", N1, DK, DV)
        assert 70 <= ratio <= 110

    def test_op_ratio_at_65536(self):
        ratio = bench.analytic_ops("dot", N2, DK, DV) / bench.analytic_ops("kernel", N2, DK, DV)
        assert 1000 <= ratio <= 2000

    def test_unknown_mechanism_rejected(self):
        with pytest.raises(ConfigurationError):
            bench.analytic_ops("flash", 16, 2, 2)


class TestAnalyticBytes:
    def test_dot_matches_69MB_at_4096(self):
        b = bench.analytic_bytes("dot", N1, DK, DV)
        assert abs(b - 69e6) / 69e6 <= 0.10

    def test_dot_matches_17GB_at_65536(self):
        b = bench.analytic_bytes("dot", N2, DK, DV)
        assert abs(b - 17.2e9) / 17.2e9 <= 0.05

    def test_kernel_within_factor_two_of_3MB(self):
        b = bench.analytic_bytes("kernel", N1, DK, DV)
        assert 1.5e6 <= b <= 6e6

    def test_byte_ratio_at_4096(self):
        ratio = bench.analytic_bytes("dot", N1, DK, DV) / bench.analytic_bytes("kernel", N1, DK, DV)
        assert 14 <= ratio <= 30

    def test_byte_ratio_at_65536(self):
        ratio = bench.analytic_bytes("dot", N2, DK, DV) / bench.analytic_bytes("kernel", N2, DK, DV)
        assert 200 <= ratio <= 500

    def test_dot_bytes_monotone_and_n2_dominated(self):
        prev = 0
        for n in (1024, 2048, 4096, 8192, 16384, 65536):
            b = bench.analytic_bytes("dot", n, DK, DV)
            assert b > prev
            prev = b
            if n >= 4096:
                assert 4 * n * n / b >= 0.90


class TestScalingFit:
    def test_exact_linear_slope(self):
        pts = [(n, 3.0 * n) for n in (64, 128, 256, 512)]
        assert bench.fit_scaling_exponent(pts) == pytest.approx(1.0, abs=1e-9)

    def test_exact_quadratic_slope(self):
        pts = [(n, 0.5 * n * n) for n in (64, 128, 256, 512)]
        assert bench.fit_scaling_exponent(pts) == pytest.approx(2.0, abs=1e-9)

    def test_kernel_analytic_ops_slope_one(self):
        pts = [(n, bench.analytic_ops("kernel", n, DK, DV)) for n in (1024, 2048, 4096, 8192)]
        assert bench.fit_scaling_exponent(pts) == pytest.approx(1.0, abs=1e-12)

    def test_too_few_points_rejected(self):
        with pytest.raises(ContractError):
            bench.fit_scaling_exponent([(1, 1.0), (2, 2.0)])

    def test_nonpositive_measurement_rejected(self):
        with pytest.raises(NumericError):
            bench.fit_scaling_exponent([(1, 1.0), (2, 0.0), (4, 4.0)])

    def test_non_increasing_n_rejected(self):
        with pytest.raises(ContractError):
            bench.fit_scaling_exponent([(4, 1.0), (2, 2.0), (8, 4.0)])


class TestMeasuredProfile:
    def test_small_configs_return_time_and_peak(self):
        out = bench.measured_profile("kernel", 512, 8, 8, repeats=3)
        assert out is not None
        ns, peak = out
        assert ns > 0
        assert 0 < peak < 4 * 512 * 64 * 8  # far below anything quadratic

    def test_dot_peak_tracks_analytic(self):
        n = 1024
        out = bench.measured_profile("dot", n, DK, DV, repeats=3)
        assert out is not None
        _, peak = out
        analytic = bench.analytic_bytes("dot", n, DK, DV)
        # tracker excludes the pre-existing inputs; model includes them
        assert abs(peak - analytic) / analytic < 0.15

    def test_infeasible_config_skips(self):
        # ~1.5 PB requirement can never fit
        assert bench.measured_profile("dot", 2**20 * 16, 2, 2, repeats=3) is None

    def test_repeats_contract(self):
        with pytest.raises(ContractError):
            bench.measured_profile("kernel", 64, 4, 4, repeats=2)


class TestReports:
    def test_build_report_row_count(self):
        rows = bench.build_report([256, 512], 8, 8)
        assert len(rows) == 4
        assert {r.mechanism for r in rows} == {"dot", "kernel"}

    def test_csv_line_count_analytic(self):
        rows = bench.build_report([256, 512], 8, 8)
        text = bench.report_csv(rows)
        lines = text.strip().split("\n")
        assert len(lines) == 5
        assert lines[0] == bench.CSV_HEADER

    def test_csv_two_row_report_three_lines(self):
        rows = bench.build_report([128], 4, 4)
        assert len(bench.report_csv(rows).strip().split("\n")) == 3

    def test_csv_measured_has_machine_comments(self):
        rows = bench.build_report([128], 4, 4, mode="measured", repeats=3)
        lines = bench.report_csv(rows).strip().split("\n")
        assert lines[0].startswith("#")
        assert any("convention" in ln for ln in lines if ln.startswith("#"))
        data = [ln for ln in lines if not ln.startswith("#")]
        assert len(data) == 3

    def test_empty_report_rejected(self):
        with pytest.raises(ContractError):
            bench.report_csv([])

    def test_emit_files(self, tmp_path):
        rows = bench.build_report([64, 128], 4, 4)
        csv_path = tmp_path / "r.csv"
        svg_path = tmp_path / "r.svg"
        bench.emit_report(rows, csv_path, svg_path)
        assert csv_path.read_text().startswith(bench.CSV_HEADER)
        root = ET.fromstring(svg_path.read_text())  # must parse as XML
        bars = [el for el in root.iter() if el.tag.endswith("rect")
                and el.get("class") == "bar"]
        assert len(bars) == len(rows)

    def test_convention_string_frozen(self):
        assert "2 ops" in bench.COST_MODEL.convention
        assert "4 bytes" in bench.COST_MODEL.convention
