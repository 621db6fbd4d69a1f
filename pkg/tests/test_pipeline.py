import json

import numpy as np
import pytest
from sklearn.pipeline import Pipeline

from conebeam.arrays import Volume, load, mse, read_header, write_array
from conebeam.config import config_from_mapping
from conebeam.pipeline import (
    NORMALIZATION, StageError, build_pipeline, report_path, run_pipeline, synthesize,
)
from conebeam.solvers import fdk

GEOMETRY = {"sod": "300", "sdd": "600", "nu": "32", "nv": "32", "du": "3", "dv": "3",
            "num_views": "24", "nx": "20", "ny": "20", "nz": "20", "voxel_size": "2"}


def small_config(**sections):
    return config_from_mapping({"geometry": GEOMETRY, **sections})


def test_build_pipeline_is_sklearn():
    pipe = build_pipeline(small_config())
    assert isinstance(pipe, Pipeline) and [n for n, _ in pipe.steps] == ["sem", "recon", "iem"]


def test_identity_stages_reduce_to_the_reconstructor():
    cfg = small_config(solver={"method": "fdk"}, dose={"preset": "low", "seed": "3"})
    volume, report = run_pipeline(cfg)
    _, _, measured = synthesize(cfg)
    expected = fdk(measured, cfg.geometry)
    assert volume.data.tobytes() == expected.data.tobytes()
    assert report.stages[0].mse > 0  # noisy input scored against the clean sinogram
    assert report.stages[1].mse == report.stages[2].mse


def test_repeat_runs_are_bitwise_identical():
    cfg = small_config(dose={"preset": "low", "seed": "1"}, solver={"max_iters": "15"},
                       sem={"kind": "gaussian", "sigma": "0.5"}, iem={"kind": "tv", "lambda": "0.05"})
    a, _ = run_pipeline(cfg)
    b, _ = run_pipeline(cfg)
    assert a.data.tobytes() == b.data.tobytes()


def test_report_is_complete(tmp_path):
    cfg = small_config(dose={"preset": "clinical", "seed": "2"}, solver={"max_iters": "5"},
                       iem={"kind": "median"},
                       paths={"output": str(tmp_path / "out" / "v.ctarr"),
                              "intermediates": str(tmp_path / "stages")})
    volume, report = run_pipeline(cfg)
    assert [s.name for s in report.stages] == ["sem", "recon", "iem"]
    assert all(s.wall_time >= 0 and s.mse is not None for s in report.stages)
    recon = report.stages[1].detail
    assert recon["method"] == "nag" and recon["iterations_run"] == 5
    assert len(recon["objective_history"]) == 6
    assert report.stages[2].detail["kind"] == "median"
    assert report.dose == {"i0": 1e6, "seed": 2, "count_floor": 0.5, "attenuation_scale": 0.02}
    assert report.normalization == NORMALIZATION

    written = json.loads(report_path(cfg.output_path).read_text())
    assert written["stages"][2]["mse"] == report.final_mse
    assert load(cfg.output_path).data.tobytes() == volume.data.tobytes()
    for name, kind in (("sem", "sinogram"), ("recon", "volume"), ("iem", "volume")):
        header = read_header(tmp_path / "stages" / f"{name}.ctarr")
        assert header["kind"] == kind and header["stage"] == name


def test_inputs_from_files(tmp_path):
    cfg = small_config(phantom={"kind": "sphere", "radius": "0.5"}, solver={"method": "fdk"})
    truth, clean, _ = synthesize(cfg)
    write_array(tmp_path / "s.ctarr", clean)
    write_array(tmp_path / "t.ctarr", truth)
    cfg = small_config(solver={"method": "fdk"},
                       paths={"input": str(tmp_path / "s.ctarr"), "truth": str(tmp_path / "t.ctarr")})
    volume, report = run_pipeline(cfg)
    assert report.inputs == {"sinogram": str(tmp_path / "s.ctarr"), "truth": str(tmp_path / "t.ctarr")}
    assert report.final_mse == pytest.approx(mse(volume, truth))


def test_missing_input_file():
    with pytest.raises(FileNotFoundError, match="input file not found"):
        run_pipeline(small_config(paths={"input": "/nonexistent/s.ctarr"}))


def test_wrong_kind_of_input(tmp_path):
    write_array(tmp_path / "v.ctarr", Volume(np.zeros((20, 20, 20), dtype=np.float32)))
    with pytest.raises(ValueError, match="expected a sinogram"):
        run_pipeline(small_config(paths={"input": str(tmp_path / "v.ctarr")}))


def test_shape_mismatch_is_attributed():
    with pytest.raises(StageError) as info:
        run_pipeline(small_config(), sinogram=np.zeros((3, 4, 5)))
    assert info.value.stage == "input"


def test_failing_stage_is_named(monkeypatch):
    cfg = small_config(solver={"max_iters": "2"}, iem={"kind": "tv"})

    def boom(X):
        raise RuntimeError("kaput")

    monkeypatch.setattr(cfg.iem, "transform", boom)
    with pytest.raises(StageError, match="stage 'iem' failed: kaput") as info:
        run_pipeline(cfg)
    assert info.value.stage == "iem"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_low_dose_sphere_enhancement_helps(seed):
    cfg = small_config(phantom={"kind": "sphere", "radius": "0.6"}, dose={"preset": "low", "seed": str(seed)},
                       solver={"max_iters": "30"}, iem={"kind": "tv", "lambda": "0.1"})
    _, report = run_pipeline(cfg)
    assert report.final_mse < report.stages[1].mse


def test_evaluate_off_drops_metrics():
    cfg = small_config(solver={"method": "fdk"}, eval={"evaluate": "false"})
    _, report = run_pipeline(cfg)
    assert all(s.mse is None for s in report.stages)
