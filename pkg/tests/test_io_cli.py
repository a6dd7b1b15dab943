import json
import math
import subprocess
import sys

import numpy as np
import pytest

from harmonicpose.cli import main
from harmonicpose.io import (AssociationFile, CameraBlock, InputFormatError,
                             load_association_file, save_association_file)


def unit_rows(arr):
    arr = np.asarray(arr, dtype=float)
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def sample_file(rng, n=5, with_gt=True):
    from harmonicpose.geometry import exp_so3
    left = unit_rows(rng.normal(size=(n, 3)))
    right = unit_rows(rng.normal(size=(n, 3)))
    edges = [(i, i, float(rng.uniform(0.7, 1.0))) for i in range(n)]
    gt_R = exp_so3(rng.normal(size=3) * 0.3) if with_gt else None
    gt_t = unit_rows(rng.normal(size=(1, 3)))[0] if with_gt else None
    return AssociationFile(
        left=CameraBlock(bearings=left), right=CameraBlock(bearings=right),
        edges=edges, gt_rotation=gt_R, gt_translation=gt_t,
        gt_matches=[(i, i) for i in range(n)] if with_gt else None)


class TestRoundTrip:
    def test_bit_exact_bearings(self, tmp_path):
        rng = np.random.default_rng(0)
        afile = sample_file(rng)
        path = tmp_path / "assoc.json"
        save_association_file(path, afile)
        loaded = load_association_file(path)
        assert np.array_equal(loaded.left.bearings, afile.left.bearings)
        assert np.array_equal(loaded.right.bearings, afile.right.bearings)
        assert loaded.edges == afile.edges
        assert np.array_equal(loaded.gt_rotation, afile.gt_rotation)
        assert loaded.gt_matches == afile.gt_matches

    def test_double_round_trip_stable(self, tmp_path):
        rng = np.random.default_rng(1)
        afile = sample_file(rng)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_association_file(p1, afile)
        save_association_file(p2, load_association_file(p1))
        assert p1.read_text() == p2.read_text()

    def test_pixels_with_intrinsics(self, tmp_path):
        intr = {"fx": 500.0, "fy": 480.0, "cx": 320.0, "cy": 240.0}
        pixels = np.array([[320.0, 240.0], [400.0, 300.0]])
        afile = AssociationFile(
            left=CameraBlock(pixels=pixels, intrinsics=intr),
            right=CameraBlock(bearings=np.array([[0.0, 0.0, 1.0],
                                                 [0.0, 1.0, 0.0]])),
            edges=[(0, 0, 0.9), (1, 1, 0.8)])
        path = tmp_path / "px.json"
        save_association_file(path, afile)
        g = load_association_file(path).to_graph()
        # Principal point maps to the optical axis.
        assert np.allclose(g.left[0], [0.0, 0.0, 1.0], atol=1e-12)
        K = np.array([[intr["fx"], 0, intr["cx"]],
                      [0, intr["fy"], intr["cy"]], [0, 0, 1.0]])
        ray = np.linalg.inv(K) @ np.array([400.0, 300.0, 1.0])
        assert np.allclose(g.left[1], ray / np.linalg.norm(ray), atol=1e-12)

    def test_renormalization_warning(self, tmp_path, caplog):
        path = tmp_path / "off.json"
        doc = {
            "version": 1,
            "cameras": {
                "left": {"bearings": [["0.0", "0.0", "1.00001"]]},
                "right": {"bearings": [["0.0", "0.0", "1.0"]]},
            },
            "edges": [[0, 0, 1.0]],
        }
        path.write_text(json.dumps(doc))
        import logging
        with caplog.at_level(logging.WARNING, logger="harmonicpose.io"):
            loaded = load_association_file(path)
        assert any("renormalizing" in r.message for r in caplog.records)
        assert np.linalg.norm(loaded.left.bearings[0]) == pytest.approx(1.0)


class TestMalformedFiles:
    def write(self, tmp_path, doc):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc) if isinstance(doc, dict) else doc)
        return path

    def test_invalid_json(self, tmp_path):
        path = self.write(tmp_path, "{not json")
        with pytest.raises(InputFormatError):
            load_association_file(path)

    def test_bad_version(self, tmp_path):
        path = self.write(tmp_path, {"version": 99, "cameras": {}, "edges": []})
        with pytest.raises(InputFormatError) as info:
            load_association_file(path)
        assert "version" in str(info.value)

    def test_edge_out_of_range(self, tmp_path):
        doc = {
            "version": 1,
            "cameras": {
                "left": {"bearings": [["0.0", "0.0", "1.0"]]},
                "right": {"bearings": [["0.0", "0.0", "1.0"]]},
            },
            "edges": [[0, 5, 1.0]],
        }
        path = self.write(tmp_path, doc)
        with pytest.raises(InputFormatError) as info:
            load_association_file(path)
        assert "edges[0]" in str(info.value)

    def test_camera_without_data(self, tmp_path):
        doc = {"version": 1,
               "cameras": {"left": {}, "right": {"bearings": []}},
               "edges": []}
        path = self.write(tmp_path, doc)
        with pytest.raises(InputFormatError) as info:
            load_association_file(path)
        assert "cameras.left" in str(info.value)


def run_cli(args):
    return main([str(a) for a in args])


class TestCli:
    def simulate(self, tmp_path, seed=0, points=8):
        out = tmp_path / "scene.json"
        code = run_cli(["simulate", "--points", points, "--seed", seed,
                        "--ambiguity", "2", "--outlier-fraction", "0.25",
                        "--output", out])
        assert code == 0
        return out

    def test_simulate_then_estimate(self, tmp_path, capsys):
        scene = self.simulate(tmp_path)
        out = tmp_path / "result.json"
        code = run_cli(["estimate", "--input", scene, "--mechanism", "cm",
                        "--grid-n", "3", "--epsilon-deg", "4.0",
                        "--outlier-range-deg", "80.0", "--output", out])
        assert code == 0
        record = json.loads(out.read_text())
        assert record["config"]["mechanism"] == "cm"
        assert record["score"] >= 1.0
        assert "error_deg" in record
        assert len(record["rotation"]) == 9

    def test_estimate_all_mechanisms_agree_on_plumbing(self, tmp_path):
        scene = self.simulate(tmp_path, seed=1, points=6)
        for mech in ("cm", "mcm", "hcm", "mcm-hcm"):
            out = tmp_path / f"r_{mech}.json"
            code = run_cli(["estimate", "--input", scene, "--mechanism", mech,
                            "--grid-n", "2", "--epsilon-deg", "5.0",
                            "--outlier-range-deg", "60.0", "--output", out])
            assert code == 0
            record = json.loads(out.read_text())
            assert record["config"]["mechanism"] == mech

    def test_empty_edges_distinct_exit_code(self, tmp_path):
        doc = {
            "version": 1,
            "cameras": {
                "left": {"bearings": [["0.0", "0.0", "1.0"]]},
                "right": {"bearings": [["0.0", "0.0", "1.0"]]},
            },
            "edges": [],
        }
        path = tmp_path / "empty.json"
        path.write_text(json.dumps(doc))
        assert run_cli(["estimate", "--input", path]) == 4

    def test_malformed_file_exit_code(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{broken")
        assert run_cli(["estimate", "--input", path]) == 2

    def test_missing_file_exit_code(self, tmp_path):
        assert run_cli(["estimate", "--input", tmp_path / "nope.json"]) == 2

    def test_usage_error_exit_code(self):
        proc = subprocess.run(
            [sys.executable, "-m", "harmonicpose.cli", "estimate",
             "--mechanism", "bogus"],
            capture_output=True, text=True)
        assert proc.returncode == 1

    def test_assign_command(self, tmp_path):
        scene = self.simulate(tmp_path, seed=2)
        out = tmp_path / "assign.json"
        code = run_cli(["assign", "--input", scene, "--px", "0.3",
                        "--py", "0.3", "--output", out])
        assert code == 0
        record = json.loads(out.read_text())
        probs = np.array([p for _, _, p in record["probs"]])
        assert np.all(probs >= 0.0) and np.all(probs <= 1.0)
        totals = np.array(record["left_totals"])
        assert totals.max() <= 0.3 + 1e-6

    def test_metrics_command(self, tmp_path):
        scene = self.simulate(tmp_path, seed=3)
        out = tmp_path / "metrics.json"
        assert run_cli(["metrics", "--input", scene, "--output", out]) == 0
        record = json.loads(out.read_text())
        # Every planted pair is in the candidate set, so recall is 1.
        assert record["recall"] == pytest.approx(1.0)
        assert record["group_precision_left"] == pytest.approx(1.0)
        assert 0.0 < record["precision"] <= 1.0

    def test_metrics_without_gt(self, tmp_path):
        rng = np.random.default_rng(5)
        afile = sample_file(rng, with_gt=False)
        path = tmp_path / "nogt.json"
        save_association_file(path, afile)
        assert run_cli(["metrics", "--input", path]) == 2

    def test_discretize_error_command(self, tmp_path):
        out = tmp_path / "disc.json"
        csv_path = tmp_path / "disc.csv"
        code = run_cli(["discretize-error", "--grid-n", "16", "--trials",
                        "200", "--seed", "1", "--output", out,
                        "--csv", csv_path])
        assert code == 0
        record = json.loads(out.read_text())
        assert record["max_rotation_deg"] < 16.0
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "parameter,threshold_or_bin,value"
        assert len(lines) > 10

    def test_bench_command(self, tmp_path):
        out = tmp_path / "bench.json"
        code = run_cli(["bench", "--sizes", "64,128", "--trials", "120",
                        "--output", out])
        assert code == 0
        record = json.loads(out.read_text())
        assert record["results"]["n"] == [64, 128]

    def test_sweep_command(self, tmp_path):
        out = tmp_path / "sweep.json"
        csv_path = tmp_path / "sweep.csv"
        code = run_cli(["sweep", "--p-values", "0.1,0.3", "--scenes", "2",
                        "--points", "5", "--grid-n", "2", "--seed", "5",
                        "--epsilon-deg", "4.0", "--outlier-range-deg", "80.0",
                        "--output", out, "--csv", csv_path])
        assert code == 0
        record = json.loads(out.read_text())
        assert record["p_values"] == [0.1, 0.3]
        assert len(record["c_values"]) == 2
        assert csv_path.exists()

    def test_config_echo_reproducibility(self, tmp_path):
        scene = self.simulate(tmp_path, seed=6)
        out1 = tmp_path / "r1.json"
        out2 = tmp_path / "r2.json"
        args = ["estimate", "--input", scene, "--mechanism", "cm",
                "--grid-n", "2", "--epsilon-deg", "4.0",
                "--outlier-range-deg", "80.0"]
        assert run_cli(args + ["--output", out1]) == 0
        assert run_cli(args + ["--output", out2]) == 0
        r1 = json.loads(out1.read_text())
        r2 = json.loads(out2.read_text())
        r1.pop("elapsed_s")
        r2.pop("elapsed_s")
        assert r1 == r2
