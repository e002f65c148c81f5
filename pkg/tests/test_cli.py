import json

import numpy as np

from bitesim.cli import main
from bitesim.perception import PointCloud, save_cloud

SHORT_SCENARIO = {
    "segments": {"arc_s": 1.0, "entry_s": 0.5, "exit_s": 0.5, "retract_s": 1.0},
    "horizon_s": 3.5,
    "joint_log_stride": 0,
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


class TestTrialCommand:
    def test_nominal_short(self, tmp_path, capsys):
        scen = write_json(tmp_path / "s.json", SHORT_SCENARIO)
        code = main(["trial", scen, "--out-dir", str(tmp_path / "out")])
        assert code == 0
        out = capsys.readouterr().out
        assert "outcome: success" in out
        assert (tmp_path / "out" / "nominal_report.json").exists()
        assert (tmp_path / "out" / "nominal_log.npz").exists()
        assert (tmp_path / "out" / "nominal_trajectory.csv").exists()

    def test_aborted_trial_exit_code(self, tmp_path):
        scen = write_json(tmp_path / "s.json", {
            **SHORT_SCENARIO,
            "disturbance": {"kind": "sinusoid", "amplitude_n": 3.5, "period_s": 3.0,
                            "direction": [0.0, 0.0, 1.0]},
        })
        assert main(["trial", scen, "--out-dir", str(tmp_path)]) == 3

    def test_bad_config_exit_code(self, tmp_path):
        scen = write_json(tmp_path / "s.json", {"food": "pizza"})
        assert main(["trial", scen, "--out-dir", str(tmp_path)]) == 2

    def test_preset_flag(self, tmp_path):
        scen = write_json(tmp_path / "s.json", SHORT_SCENARIO)
        code = main(["trial", scen, "--preset", "less_reactive",
                     "--out-dir", str(tmp_path)])
        assert code == 0

    def test_seed_flag_changes_report(self, tmp_path):
        scen = write_json(tmp_path / "s.json", SHORT_SCENARIO)
        main(["trial", scen, "--seed", "7", "--out-dir", str(tmp_path / "a")])
        report = json.loads((tmp_path / "a" / "nominal_report.json").read_text())
        assert report["seed"] == 7


class TestSuiteCommand:
    def test_small_suite(self, tmp_path, capsys):
        suite = write_json(tmp_path / "suite.json", {
            "name": "mini", "seed": 5, "repetitions": 2,
            "trials": [
                {"method": "ours", "scenario": SHORT_SCENARIO},
                {"method": "ours", "scenario": {**SHORT_SCENARIO,
                                                "bite": {"refuse": True}}},
            ],
        })
        assert main(["suite", suite, "--out-dir", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "ours" in out
        data = json.loads((tmp_path / "mini_suite.json").read_text())
        assert data["total"] == 4
        assert data["per_method"]["ours"]["success"] == 2
        assert data["per_method"]["ours"]["bite_failure"] == 2

    def test_suite_config_error(self, tmp_path):
        suite = write_json(tmp_path / "suite.json", {"trials": []})
        assert main(["suite", suite, "--out-dir", str(tmp_path)]) == 2


class TestWristStudyCommand:
    def test_small_study(self, tmp_path, capsys):
        study = write_json(tmp_path / "study.json", {"count": 60, "seed": 3})
        assert main(["wrist-study", study, "--out-dir", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "study_report.json").read_text())
        assert report["sample_count"] == 60
        samples = (tmp_path / "study_samples.csv").read_text().splitlines()
        assert len(samples) == 61

    def test_invalid_study_exit_code(self, tmp_path):
        study = write_json(tmp_path / "study.json", {
            "count": 10, "seed": 1, "mouth_position": [10.0, 0.0, 0.45],
            "ik": {"damping": 0.02, "pos_tol": 1e-3, "rot_tol": 1e-2, "max_iter": 30},
        })
        assert main(["wrist-study", study, "--out-dir", str(tmp_path)]) == 4


class TestOffsetsCommand:
    def test_offsets_from_cloud(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, (100, 3)) + [2.0, 0.0, 0.0]
        pts[0] = [2.0, 0.0, 0.0]
        pts[1] = [8.0, 10.0, 1.0]
        pts[2] = [2.0, 10.0, 0.0]
        path = tmp_path / "cloud.csv"
        save_cloud(PointCloud(np.vstack([pts, [[8.0, 0.0, 0.0]]])), path)
        assert main(["offsets", str(path)]) == 0
        out = capsys.readouterr().out
        assert "dx_mm: -5.0" in out
        assert "dy_mm: -10.0" in out

    def test_empty_cloud_is_config_error(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("# frame=mouth resolution_mm=0.1\nx_mm,y_mm,z_mm\n")
        assert main(["offsets", str(path)]) == 2


class TestExportCommand:
    def test_export_roundtrip(self, tmp_path):
        scen = write_json(tmp_path / "s.json", SHORT_SCENARIO)
        main(["trial", scen, "--out-dir", str(tmp_path)])
        out_csv = tmp_path / "re_export.csv"
        assert main(["export", str(tmp_path / "nominal_log.npz"),
                     str(out_csv)]) == 0
        direct = (tmp_path / "nominal_trajectory.csv").read_bytes()
        assert out_csv.read_bytes() == direct

    def test_missing_log_config_error(self, tmp_path):
        assert main(["export", str(tmp_path / "nope.npz"),
                     str(tmp_path / "x.csv")]) == 2
