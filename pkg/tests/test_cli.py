"""CLI surface: subcommand behavior, exit codes, image formats, determinism."""

import contextlib
import io
import subprocess
import sys

import numpy as np
import pytest

from linattn.cli import main
from linattn.errors import DataError
from linattn.imageio import load_image, load_labels, save_image, save_labels
from linattn.tensor import Tensor


def run_main(argv):
    """Invoke the CLI in-process, capturing stdout."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


class TestImageFormats:
    def test_ppm_hand_written_bytes(self, tmp_path):
        # 2x2 P6 with known pixel values
        payload = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153])
        path = tmp_path / "img.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + payload)
        t = load_image(path)
        assert t.shape == (3, 2, 2)
        np.testing.assert_allclose(t.data[:, 0, 0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(t.data[:, 1, 1], [51 / 255, 102 / 255, 153 / 255])

    def test_ppm_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = Tensor(rng.uniform(0, 1, (3, 5, 4)))
        p1, p2 = tmp_path / "a.ppm", tmp_path / "b.ppm"
        save_image(img, p1)
        save_image(load_image(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 5, size=(6, 7))
        path = tmp_path / "lab.pgm"
        save_labels(labels, path)
        np.testing.assert_array_equal(load_labels(path), labels)

    def test_maxval_over_255_rejected(self, tmp_path):
        path = tmp_path / "big.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(DataError, match="maxval"):
            load_labels(path)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(DataError, match="byte 11"):
            load_image(path)

    def test_comments_in_header_accepted(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([3, 4]))
        np.testing.assert_array_equal(load_labels(path), [[3, 4]])


class TestSubcommands:
    def test_equiv_passes_and_prints_error(self):
        code, out = run_main(["equiv", "--n", "64", "--dk", "8", "--dv", "8",
                              "--trials", "20", "--seed", "42"])
        assert code == 0
        assert "max relative error" in out

    def test_equiv_deterministic_output(self):
        argv = ["equiv", "--n", "32", "--dk", "4", "--dv", "4", "--trials", "10", "--seed", "7"]
        assert run_main(argv) == run_main(argv)

    def test_gradcheck_passes(self):
        code, out = run_main(["gradcheck", "--seeds", "1", "--seed", "3"])
        assert code == 0
        assert "PASS" in out and "FAIL" not in out

    def test_bench_csv_row_contract(self, tmp_path):
        out_csv = tmp_path / "r.csv"
        code, _ = run_main(["bench", "--n-list", "1024,4096", "--dk", "32", "--dv", "64",
                            "--mode", "analytic", "--out", str(out_csv)])
        assert code == 0
        lines = out_csv.read_text().strip().split("\n")
        assert len(lines) == 5  # header + 2 mechanisms x 2 sizes
        assert lines[0].startswith("mechanism,")

    def test_bench_svg(self, tmp_path):
        out_csv, out_svg = tmp_path / "r.csv", tmp_path / "r.svg"
        code, _ = run_main(["bench", "--n-list", "256", "--dk", "8", "--dv", "8",
                            "--out", str(out_csv), "--svg", str(out_svg)])
        assert code == 0
        assert out_svg.read_text().startswith("<svg")

    def test_metrics_self_comparison_all_ones(self, tmp_path):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, size=(16, 16))
        path = tmp_path / "lab.pgm"
        save_labels(labels, path)
        code, out = run_main(["metrics", "--pred", str(path), "--ref", str(path),
                              "--classes", "3"])
        assert code == 0
        values = out.strip().split("\n")[-1].split(",")
        assert values[:6] == ["1.000000"] * 6

    def test_selftest_quick(self):
        code, out = run_main(["selftest", "--trials", "5"])
        assert code == 0
        assert "convention" in out
        assert "all" in out and "passed" in out

    def test_selftest_corrupted_tolerance_fails(self):
        from linattn.selftest import print_results, run_selftest
        results = run_selftest(seed=0, tolerance_scale=1e-12, trials=3)
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = print_results(results)
        assert code == 1
        assert "FAIL" in buf.getvalue()

    def test_train_and_segment_round_trip(self, tmp_path):
        ckpt = tmp_path / "model.ckpt"
        code, out = run_main(["train-demo", "--steps", "3", "--classes", "3", "--size", "32",
                              "--samples", "6", "--tiny", "--seed", "0", "--out", str(ckpt)])
        assert code == 0 and ckpt.exists()
        # build an input image and segment it
        from linattn.synthetic import generate_synthetic_dataset
        img, _ = generate_synthetic_dataset(1, 32, 3, seed=5)[0]
        ppm = tmp_path / "in.ppm"
        save_image(img, ppm)
        out_pgm = tmp_path / "out.pgm"
        code, _ = run_main(["segment", "--model", str(ckpt), "--input", str(ppm),
                            "--out", str(out_pgm)])
        assert code == 0
        pred = load_labels(out_pgm)
        assert pred.shape == (32, 32)
        assert pred.min() >= 0 and pred.max() < 3

    def test_every_run_prints_config(self):
        _, out = run_main(["equiv", "--n", "8", "--dk", "2", "--dv", "2", "--trials", "2"])
        assert out.startswith("# config:")
        assert "seed=0" in out.split("\n")[0]


class TestExitCodes:
    def test_usage_error_is_2(self):
        proc = subprocess.run(
            [sys.executable, "-m", "linattn.cli", "equiv", "--bogus-flag"],
            capture_output=True, text=True)
        assert proc.returncode == 2
        assert "usage" in proc.stderr.lower()

    def test_unknown_subcommand_is_2(self):
        proc = subprocess.run(
            [sys.executable, "-m", "linattn.cli", "frobnicate"],
            capture_output=True, text=True)
        assert proc.returncode == 2

    def test_missing_file_is_1(self, tmp_path):
        code = main(["metrics", "--pred", str(tmp_path / "nope.pgm"),
                     "--ref", str(tmp_path / "nope.pgm"), "--classes", "2"])
        assert code == 1

    def test_subprocess_determinism(self, tmp_path):
        argv = [sys.executable, "-m", "linattn.cli", "equiv", "--n", "16", "--dk", "3",
                "--dv", "3", "--trials", "5", "--seed", "11", "--threads", "1"]
        a = subprocess.run(argv, capture_output=True, text=True)
        b = subprocess.run(argv, capture_output=True, text=True)
        assert a.returncode == 0 and a.stdout == b.stdout
