import csv
import json
from importlib import resources

import numpy as np
import pytest

from fsisens import cli
from fsisens.config import CaseConfig, ConfigError
from fsisens.meshkit import save_mesh, read_vtk_counts


def _write_case(tmp_path, beam, **overrides):
    g, fm, sm = beam
    save_mesh(fm, tmp_path / "fluid.fsimesh")
    save_mesh(sm, tmp_path / "structure.fsimesh")
    text = resources.files("fsisens").joinpath("data/beam.cfg").read_text()
    lines, section = [], ""
    for line in text.splitlines():
        if line.startswith("["):
            section = line.strip("[] ")
        key = line.split("=")[0].strip()
        # keys may be qualified as "section.key"
        for name in (f"{section}.{key}", key):
            if "=" in line and name in overrides:
                line = f"{key} = {overrides.pop(name)}"
                break
        lines.append(line)
    assert not overrides, f"unknown keys {overrides}"
    p = tmp_path / "case.cfg"
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture
def case_cfg(tmp_path, coarse_beam):
    return _write_case(tmp_path, coarse_beam)


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config ")
    return list(csv.DictReader(lines[1:]))


def test_seed_only(tmp_path):
    assert cli.main(["--seed-case", "beam", "--out", str(tmp_path)]) == 0
    cfg = CaseConfig.from_file(tmp_path / "beam.cfg")
    fm, sm = cfg.load_meshes()
    assert len(fm.tag_edges("interface")) == 84
    assert len(cfg.config_hash) == 16


def test_missing_mesh_is_input_error(tmp_path, case_cfg, capsys):
    (tmp_path / "structure.fsimesh").unlink()
    out = tmp_path / "o"
    assert cli.main(["solve-fsi", "--config", str(case_cfg), "--out", str(out)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["kind"] == "input" and err["path"].endswith("structure.fsimesh")
    assert json.loads((out / "error.json").read_text()) == err


def test_missing_config(tmp_path):
    assert cli.main(["solve-fsi", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path)]) == 2
    assert cli.main(["solve-fsi", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("override", [{"method": "nearest_element mortar"},
                                      {"interface_drag": "nan"},
                                      {"omega0": "1.5"},
                                      {"force_mode": "lumped"}])
def test_invalid_config_values(tmp_path, coarse_beam, override):
    p = _write_case(tmp_path, coarse_beam, **override)
    with pytest.raises(ConfigError):
        CaseConfig.from_file(p)
    assert cli.main(["solve-fsi", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_unknown_objective(tmp_path, case_cfg):
    case_cfg.write_text(case_cfg.read_text().replace("power_loss = 0.0", "lift = 1.0"))
    with pytest.raises(ConfigError, match="lift"):
        CaseConfig.from_file(case_cfg)


def test_solve_fsi_artifacts_and_determinism(tmp_path, case_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["solve-fsi", "--config", str(case_cfg), "--out", str(a)]) == 0
    assert cli.main(["solve-fsi", "--config", str(case_cfg), "--out", str(b)]) == 0
    for name in ("metrics.json", "history.csv", "fluid.vtk", "structure.vtk"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    m = json.loads((a / "metrics.json").read_text())
    h = CaseConfig.from_file(case_cfg).config_hash
    assert m["config_hash"] == h
    assert 0.0 < m["drag_reduction"] < 1.0
    assert m["interface_energy_fluid"] == pytest.approx(m["interface_energy_structure"], rel=1e-12)
    assert m["fsi_iterations"] == len(m["residual_history"])
    assert (a / "fluid.vtk").read_text().splitlines()[1] == f"fsisens config {h}"
    counts = read_vtk_counts(a / "fluid.vtk")
    assert counts["points"] == CaseConfig.from_file(case_cfg).load_meshes()[0].num_nodes


def test_rigid_limit_zero_deflection(tmp_path, coarse_beam):
    p = _write_case(tmp_path, coarse_beam, youngs_modulus="3e10")
    assert cli.main(["solve-fsi", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["tip_deflection"] < 1e-5
    assert abs(m["drag_reduction"]) < 1e-4


def test_numerical_failure_exit_code(tmp_path, coarse_beam, capsys):
    p = _write_case(tmp_path, coarse_beam, max_iterations="2")
    assert cli.main(["solve-fsi", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["kind"] == "numerical"


def test_adjoint_zero_weights(tmp_path, coarse_beam):
    p = _write_case(tmp_path, coarse_beam, interface_drag="0.0")
    assert cli.main(["adjoint", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "gradient_complete.csv")
    assert rows and all(float(r[k]) == 0.0 for r in rows
                        for k in ("grad_x", "grad_y", "grad_normal"))


def test_adjoint_both_formulations(tmp_path, case_cfg):
    out = tmp_path / "o"
    assert cli.main(["adjoint", "--config", str(case_cfg), "--out", str(out),
                     "--formulation", "both"]) == 0
    c = _read_csv(out / "gradient_complete.csv")
    r = _read_csv(out / "gradient_reduced.csv")
    assert [x["node"] for x in c] == [x["node"] for x in r]
    s = json.loads((out / "summary.json").read_text())
    gc = np.array([float(x["grad_normal"]) for x in c])
    gr = np.array([float(x["grad_normal"]) for x in r])
    assert s["reduced_vs_complete_error"] == pytest.approx(
        np.linalg.norm(gr - gc) / np.linalg.norm(gc), rel=1e-12)
    hist = _read_csv(out / "history.csv")
    assert hist[0]["adjoint_residual"] != ""


def test_verify_fd_smoke(tmp_path, coarse_beam):
    p = _write_case(tmp_path, coarse_beam, n_samples="2", **{"fd.tolerance": "1.0"})
    out = tmp_path / "o"
    assert cli.main(["verify-fd", "--config", str(p), "--out", str(out)]) == 0
    rep = json.loads((out / "verify_report.json").read_text())
    assert rep["pass"] and len(rep["nodes"]) == 2
    assert rep["results"]["complete"]["error"] < 1e-3
    assert rep["uncoupled_error"] > 10 * rep["results"]["complete"]["error"]
    rows = _read_csv(out / "fd_comparison.csv")
    assert set(rows[0]) >= {"node", "X", "Y", "adjoint_complete", "cd"}


def test_verify_fd_failure_exit(tmp_path, coarse_beam):
    p = _write_case(tmp_path, coarse_beam, n_samples="2", **{"fd.tolerance": "1e-14"},
                    coupled_adjoint="false")
    out = tmp_path / "o"
    assert cli.main(["verify-fd", "--config", str(p), "--out", str(out)]) == 1
    rep = json.loads((out / "verify_report.json").read_text())
    assert "complete_uncoupled" in rep["results"] and not rep["pass"]


def test_refine_study(tmp_path, coarse_beam):
    p = _write_case(tmp_path, coarse_beam, levels="2")
    out = tmp_path / "o"
    assert cli.main(["refine-study", "--config", str(p), "--out", str(out)]) == 0
    rows = _read_csv(out / "refine_study.csv")
    assert [int(r["interface_elements"]) for r in rows] == [23, 46]


def test_map_test_and_export(tmp_path, case_cfg):
    out = tmp_path / "o"
    assert cli.main(["map-test", "--config", str(case_cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "map_test.json").read_text())
    for m in ("nearest_element", "mortar"):
        assert rep[m]["identity"] and rep[m]["constant_error"] <= 1e-12
    assert cli.main(["export-vtk", "--config", str(case_cfg), "--out", str(out)]) == 0
    assert read_vtk_counts(out / "structure_mesh.vtk")["points"] > 0
