import json

import pytest

from sparsesplat.cli import main
from sparsesplat.pipeline import PipelineConfig


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cliscene")
    code = main(["gen-scene", "--out", str(path), "--seed", "4",
                 "--cameras", "8", "--gaussians", "40",
                 "--height", "32", "--width", "48"])
    assert code == 0
    return path


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.json"
    PipelineConfig(depth_layers=8, sample_steps=3, schedule_steps=50).to_json(path)
    return path


class TestGenScene:
    def test_outputs_exist(self, scene_dir):
        assert (scene_dir / "cameras.json").exists()
        assert (scene_dir / "gaussians.bin").exists()
        assert len(list(scene_dir.glob("frame_*.png"))) == 8


class TestSelectViews:
    def test_emits_plan(self, scene_dir, tmp_path):
        out = tmp_path / "plan.json"
        code = main(["select-views", "--scene", str(scene_dir),
                     "--inputs", "3", "--targets", "4", "--out", str(out)])
        assert code == 0
        plan = json.loads(out.read_text())
        assert len(plan["input_indices"]) == 3
        assert len(plan["target_indices"]) == 4

    def test_insufficient_frames_exit_2(self, scene_dir, tmp_path):
        code = main(["select-views", "--scene", str(scene_dir),
                     "--inputs", "5", "--targets", "56",
                     "--out", str(tmp_path / "p.json")])
        assert code == 2


class TestRender:
    def test_render_novel_views(self, scene_dir, fast_config, tmp_path):
        out = tmp_path / "render"
        code = main(["render", "--scene", str(scene_dir), "--out", str(out),
                     "--config", str(fast_config), "--inputs", "5",
                     "--targets", "6", "--seed", "3"])
        assert code == 0
        assert len(list(out.glob("raster_*.png"))) == 6
        assert len(list(out.glob("refined_*.png"))) == 6
        assert len(list(out.glob("raster_*.raw"))) == 6

    def test_no_refine_matches_raster(self, scene_dir, fast_config, tmp_path):
        out = tmp_path / "nr"
        code = main(["render", "--scene", str(scene_dir), "--out", str(out),
                     "--config", str(fast_config), "--targets", "2",
                     "--no-refine"])
        assert code == 0
        for i in range(2):
            a = (out / f"raster_{i:04d}.png").read_bytes()
            b = (out / f"refined_{i:04d}.png").read_bytes()
            assert a == b

    def test_missing_scene_exit_2(self, tmp_path):
        code = main(["render", "--scene", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")])
        assert code == 2

    def test_plan_file(self, scene_dir, fast_config, tmp_path):
        plan_path = tmp_path / "plan.json"
        main(["select-views", "--scene", str(scene_dir), "--inputs", "5",
              "--targets", "3", "--out", str(plan_path)])
        out = tmp_path / "planned"
        code = main(["render", "--scene", str(scene_dir), "--plan", str(plan_path),
                     "--config", str(fast_config), "--no-refine", "--out", str(out)])
        assert code == 0
        assert len(list(out.glob("raster_*.png"))) == 3


class TestEvaluate:
    def test_report_written(self, scene_dir, fast_config, tmp_path):
        out = tmp_path / "eval"
        code = main(["evaluate", "--scene", str(scene_dir), "--out", str(out),
                     "--config", str(fast_config), "--inputs", "5",
                     "--targets", "3", "--check"])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["count"] == 3
        assert (out / "report.csv").exists()
        assert all(f["psnr"] > 0 for f in report["frames"])


class TestFitDemoCli:
    def test_quick_fit(self, tmp_path):
        out = tmp_path / "fit"
        code = main(["fit-demo", "--splats", "16", "--steps", "5",
                     "--lr", "1.0", "--size", "24", "24", "--out", str(out)])
        assert code == 0
        losses = json.loads((out / "losses.json").read_text())
        assert len(losses) == 6
        assert (out / "target.png").exists()
        assert (out / "fitted.png").exists()


class TestDiffuseToy:
    def test_samples_written(self, tmp_path):
        out = tmp_path / "toy"
        code = main(["diffuse-toy", "--frames", "2", "--steps", "3",
                     "--size", "16", "24", "--out", str(out)])
        assert code == 0
        assert len(list(out.glob("sample_*.png"))) == 2

    def test_bad_size_exit_2(self, tmp_path):
        code = main(["diffuse-toy", "--size", "15", "24",
                     "--out", str(tmp_path / "x")])
        assert code == 2


class TestExitCodes:
    def test_numeric_failure_exit_3(self, tmp_path, monkeypatch):
        import sparsesplat.cli as cli
        from sparsesplat.errors import NumericError

        def boom(*a, **k):
            raise NumericError("synthetic blow-up")

        monkeypatch.setattr(cli, "fit_demo", boom)
        code = main(["fit-demo", "--splats", "4", "--steps", "2",
                     "--out", str(tmp_path / "f")])
        assert code == 3
