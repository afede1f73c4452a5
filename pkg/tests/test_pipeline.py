import json
import os

import numpy as np
import pytest

from core import pipeline
from core.cli import build_parser, resolve_thresholds, run
from core.errors import InputError
from core.scene_io import read_cameras, read_manifest, read_mask_png, read_pfm, read_ply


def _tree(root):
    """Relative path -> bytes of every file under ``root``."""
    files = {}
    for directory, _, names in os.walk(root):
        for name in names:
            path = os.path.join(directory, name)
            files[os.path.relpath(path, root)] = open(path, "rb").read()
    return files


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run(["synth", "--out", str(out), "--threads", "2"]) == 0
    return out


@pytest.fixture(scope="module")
def pipeline_run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    code = run(["pipeline", "--manifest", str(dataset / "manifest.txt"), "--targets", str(dataset / "targets.txt"),
                "--out", str(out), "--threads", "1"])
    assert code == 0
    return out


class TestSynth:
    def test_dataset_layout(self, dataset):
        entries = read_manifest(dataset / "manifest.txt")
        assert len(entries) == 25
        assert [tid for tid, _ in read_cameras(dataset / "targets.txt")] == ["t000", "t001"]
        truth = read_manifest(dataset / "truth" / "manifest.txt")
        assert [e.view_id for e in truth] == ["t000", "t001"]

    def test_targets_zoom_the_end_views(self, dataset):
        entries = read_manifest(dataset / "manifest.txt")
        targets = read_cameras(dataset / "targets.txt")
        assert targets[0][1].intrinsics.fx == 4.0 * entries[0].camera.intrinsics.fx
        assert np.allclose(targets[1][1].center, entries[-1].camera.center)


class TestCli:
    def test_unknown_flag(self, capsys):
        assert run(["warp", "--bogus"]) == 2

    def test_help(self, capsys):
        assert run(["--help"]) == 0

    def test_threads_must_be_positive(self, tmp_path, capsys):
        assert run(["synth", "--out", str(tmp_path), "--threads", "0"]) == 2
        assert "--threads" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path, capsys):
        code = run(["fuse", "--manifest", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "none.txt" in capsys.readouterr().err

    def test_invalid_threshold_names_the_flag(self, dataset, tmp_path, capsys):
        code = run(["fuse", "--manifest", str(dataset / "manifest.txt"), "--out", str(tmp_path), "--tau-num", "0"])
        assert code == 2
        assert "--tau-num" in capsys.readouterr().err

    def test_reference_out_of_range(self, dataset, tmp_path, capsys):
        code = run(["warp", "--manifest", str(dataset / "manifest.txt"), "--targets", str(dataset / "targets.txt"),
                    "--out", str(tmp_path), "--refs", "0,99"])
        assert code == 2

    def test_flags_override_the_preset(self, tmp_path):
        preset = tmp_path / "preset.json"
        preset.write_text(json.dumps({"tau_num": 4, "tau_g": 0.02}))
        args = build_parser().parse_args(["fuse", "--manifest", "m", "--out", "o", "--preset", str(preset),
                                          "--tau-num", "3"])
        thresholds = resolve_thresholds(args)
        assert (thresholds.tau_num, thresholds.tau_g, thresholds.tau_c) == (3, 0.02, 0.1)

    def test_bad_preset_is_an_input_error(self, tmp_path):
        args = build_parser().parse_args(["fuse", "--manifest", "m", "--out", "o",
                                          "--preset", str(tmp_path / "missing.json")])
        with pytest.raises(InputError):
            resolve_thresholds(args)

    def test_prints_the_stage_summary(self, dataset, tmp_path, capsys):
        out = tmp_path / "cams.txt"
        assert run(["closeup-cams", "--manifest", str(dataset / "manifest.txt"), "--out", str(out)]) == 0
        assert capsys.readouterr().out.startswith("closeup-cams: 2 zoom cameras")


class TestStages:
    def test_pipeline_outputs(self, pipeline_run):
        for name in ("t000", "t001"):
            assert (pipeline_run / "warp" / f"{name}.png").is_file()
            assert (pipeline_run / "suppressed" / f"{name}_mask.png").is_file()
            assert (pipeline_run / "global" / f"{name}_global.png").is_file()
        assert (pipeline_run / "fusion" / "counts" / "v012_count.pfm").is_file()
        state = json.loads((pipeline_run / "run_state.json").read_text())
        assert state["references"] == [0, 24]
        assert state["stages"] == ["warp", "suppress", "fuse", "project", "confidence"]

    def test_suppression_only_removes_pixels(self, pipeline_run):
        for name in ("t000", "t001"):
            warped = read_mask_png(pipeline_run / "warp" / f"{name}_valid.png")
            kept = read_mask_png(pipeline_run / "suppressed" / f"{name}_valid.png")
            removed = read_mask_png(pipeline_run / "suppressed" / f"{name}_mask.png")
            assert not (kept & ~warped).any()
            assert np.array_equal(warped, kept | removed)

    def test_fused_points_have_enough_support(self, pipeline_run):
        cloud = read_ply(pipeline_run / "fusion" / "fused.ply")
        assert len(cloud) > 0
        assert (cloud.counts >= 10).all()

    def test_count_maps_are_integral(self, pipeline_run):
        counts = read_pfm(pipeline_run / "fusion" / "counts" / "v000_count.pfm")
        assert np.array_equal(counts, np.rint(counts))
        assert counts.min() >= 0 and counts.max() <= 24

    def test_confidence_document(self, pipeline_run):
        document = json.loads((pipeline_run / "confidence" / "confidence.json").read_text())
        assert document["references"] == ["v000", "v024"]
        assert document["baseline"] == pytest.approx(0.06)
        assert document["views"]["v000"] == 1.0
        assert document["targets"]["t000"] == 1.0
        assert 0.0 < document["views"]["v012"] < 1.0

    def test_pipeline_equals_the_subcommands(self, dataset, pipeline_run, tmp_path):
        manifest, targets = str(dataset / "manifest.txt"), str(dataset / "targets.txt")
        out = tmp_path
        steps = [
            ["warp", "--manifest", manifest, "--targets", targets, "--out", str(out / "warp")],
            ["suppress", "--warp-dir", str(out / "warp"), "--targets", targets, "--out", str(out / "suppressed")],
            ["fuse", "--manifest", manifest, "--out", str(out / "fusion")],
            ["project", "--cloud", str(out / "fusion" / "fused.ply"), "--targets", targets,
             "--out", str(out / "global")],
            ["confidence", "--manifest", manifest, "--counts", str(out / "fusion" / "counts"), "--targets", targets,
             "--out", str(out / "confidence")],
        ]
        for step in steps:
            assert run(step + ["--threads", "1"]) == 0

        expected = _tree(pipeline_run)
        expected.pop("run_state.json")
        assert _tree(out) == expected

    @pytest.mark.parametrize("threads", [2, 8])
    def test_output_does_not_depend_on_threads(self, dataset, pipeline_run, tmp_path, threads):
        code = run(["pipeline", "--manifest", str(dataset / "manifest.txt"), "--targets",
                    str(dataset / "targets.txt"), "--out", str(tmp_path), "--threads", str(threads)])
        assert code == 0
        assert _tree(tmp_path) == _tree(pipeline_run)

    def test_without_suppression(self, dataset, tmp_path):
        result = pipeline.run_pipeline(str(dataset / "manifest.txt"), str(dataset / "targets.txt"), str(tmp_path),
                                       with_suppression=False)
        assert result.summary.startswith("pipeline: 2 targets, 4 stages")
        assert not (tmp_path / "suppressed").exists()

    def test_metrics_report(self, dataset, pipeline_run, tmp_path):
        code = run(["metrics", "--manifest", str(dataset / "truth" / "manifest.txt"),
                    "--renders", str(pipeline_run / "suppressed"), "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert [row["view"] for row in report["views"]] == ["t000", "t001"]
        for row in report["views"]:
            assert 0.0 < row["coverage"] <= 1.0
            assert 0.0 < row["psnr"] <= 99.0
            assert "weighted_loss" not in row
        assert "psnr" in (tmp_path / "report.txt").read_text()

    def test_metrics_with_confidence(self, dataset, pipeline_run, tmp_path):
        code = run(["metrics", "--manifest", str(dataset / "truth" / "manifest.txt"),
                    "--renders", str(pipeline_run / "suppressed"), "--out", str(tmp_path),
                    "--confidence-dir", str(pipeline_run / "confidence"), "--hard-baseline", "0.01"])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["difficulty"] == "hard"
        assert report["baseline"] == pytest.approx(0.06)
        for row in report["views"]:
            assert row["w_image"] == 1.0
            assert row["weighted_loss"] >= 0.0

    @pytest.mark.parametrize("lam", ["0", "1"])
    def test_lam_at_the_interval_ends(self, dataset, pipeline_run, tmp_path, lam):
        code = run(["metrics", "--manifest", str(dataset / "truth" / "manifest.txt"),
                    "--renders", str(pipeline_run / "suppressed"), "--out", str(tmp_path),
                    "--confidence-dir", str(pipeline_run / "confidence"), "--lam", lam])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        for row in report["views"]:
            assert row["weighted_loss"] >= 0.0

    def test_metrics_without_renders(self, dataset, tmp_path, capsys):
        code = run(["metrics", "--manifest", str(dataset / "truth" / "manifest.txt"),
                    "--renders", str(tmp_path), "--out", str(tmp_path / "report")])
        assert code == 2

    def test_dolly_cameras(self, dataset, tmp_path):
        out = tmp_path / "dolly.txt"
        result = pipeline.run_closeup_cams(str(dataset / "manifest.txt"), str(out), mode="dolly", frames=4)
        cameras = read_cameras(out)
        assert [cid for cid, _ in cameras] == ["close_000", "close_001", "close_002", "close_003"]
        assert "4 dolly cameras" in result.summary
