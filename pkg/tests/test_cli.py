import json

import numpy as np
import pytest

from svstokes.cli import RunConfig, config_from_args, main
from svstokes.mesh import load_mesh, save_mesh, single_triangle


def test_mesh_command_outputs(tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["mesh", "--foursplit", "2", "--ratio", "1.0005:1", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"mesh.json", "report.json", "mesh.vtk"}
    rep = json.loads((out / "report.json").read_text())
    assert rep["counts"]["quasi_singular"] == 4
    assert "quasi-singular 4" in capsys.readouterr().out


def test_mesh_file_roundtrip_is_bit_identical(tmp_path):
    assert main(["mesh", "--foursplit", "3", "--ratio", "3:5", "--out", str(tmp_path / "a"),
                 "--no-vtk"]) == 0
    assert main(["mesh", "--mesh", str(tmp_path / "a" / "mesh.json"), "--out",
                 str(tmp_path / "b"), "--no-vtk"]) == 0
    assert (tmp_path / "a" / "mesh.json").read_bytes() == (tmp_path / "b" / "mesh.json").read_bytes()
    assert not (tmp_path / "b" / "mesh.vtk").exists()


def test_missing_mesh_file_exit_code(tmp_path):
    assert main(["mesh", "--mesh", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_bad_arguments_exit_code(tmp_path):
    assert main(["mesh", "--foursplit", "2", "--ratio", "abc", "--out", str(tmp_path)]) == 1
    assert main(["solve", "--out", str(tmp_path)]) == 1


def test_strict_assumption_violation(tmp_path):
    save_mesh(single_triangle(), tmp_path / "t.json")
    args = ["mesh", "--mesh", str(tmp_path / "t.json"), "--out", str(tmp_path / "o")]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 3


def test_solve_and_postprocess(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["solve", "--foursplit", "2", "--ratio", "1.0005:1", "--out", str(out),
                 "--dump-system"]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["residual"] < 1e-9 and diag["err_u_h1"] > 0
    assert (out / "system.mtx").exists() and (out / "pressure.vtk").exists()
    data = np.load(out / "solution.npz")
    assert data["pressure"].shape == (16, 10)

    pp = tmp_path / "p"
    assert main(["postprocess", "--solution", str(out / "solution.npz"), "--out", str(pp)]) == 0
    summary = json.loads((pp / "postprocess.json").read_text())
    assert summary["n_coefficients"] == 16
    assert summary["err_ptilde"] < summary["err_p"]
    assert json.loads((pp / "correction.json").read_text())["coefficients"]


def test_postprocess_notice_without_quasi_vertices(tmp_path, capsys):
    assert main(["postprocess", "--foursplit", "2", "--ratio", "1:3", "--out", str(tmp_path)]) == 0
    assert "no quasi-singular vertices: p_tilde equals p_h" in capsys.readouterr().out
    data = np.load(tmp_path / "postprocessed.npz")
    assert np.array_equal(data["pressure"], data["ptilde"])


def test_config_file_with_flag_override(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"foursplit": 3, "ratio": "3:5", "scope": "all", "out": "x"}))
    cfg = config_from_args(["mesh", "--config", str(cfg_path), "--ratio", "1:1"])
    assert cfg == RunConfig(command="mesh", foursplit=3, ratio="1:1", scope="all", out="x")
    cfg_path.write_text(json.dumps({"foursplit": 3, "bogus": 1}))
    assert main(["mesh", "--config", str(cfg_path)]) == 1


def test_study_command(tmp_path, capsys):
    assert main(["study", "--ratio", "1.0005:1", "--study", "2,4", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "study.csv").read_text().strip().splitlines()
    assert len(lines) == 3 and lines[0].startswith("N,h,err_u_h1")
    assert "4x4x4" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["mesh", "--foursplit", "0"], ["study", "--study", "0"]])
def test_invalid_sizes(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 1
