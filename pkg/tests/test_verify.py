import csv

import numpy as np
import pytest

from fsisens import cases, verify
from fsisens.coupling import CouplingConfig
from fsisens.meshkit import refine_uniform
from fsisens.objectives import ObjectiveSpec

DRAG = [ObjectiveSpec("interface_drag")]


def test_relative_l2_error_examples():
    a = np.array([1.0, -2.0, 3.0])
    assert verify.relative_l2_error(a, a) == 0.0
    assert verify.relative_l2_error(2 * a, a) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        verify.relative_l2_error([3.0, 4.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        verify.relative_l2_error([1.0], [1.0, 2.0])


def test_fd_config_invariants():
    with pytest.raises(ValueError):
        verify.FdConfig(step=0.0)
    with pytest.raises(ValueError):
        verify.FdConfig(direction="diagonal")


def _point_objective(points, func):
    def evaluate(node, dX):
        p = points.copy()
        p[node] += dX
        return func(p)
    return evaluate


def test_cd_constant_objective(rng):
    pts = rng.normal(size=(5, 2))
    ev = _point_objective(pts, lambda p: 3.25)
    d = verify.central_difference(ev, range(5), rng.normal(size=(5, 2)), 1e-5)
    assert np.all(np.abs(d) <= 1e-12 / 1e-5)


def test_cd_quadratic_objective(rng):
    pts = rng.normal(size=(6, 2))
    dirs = rng.normal(size=(6, 2))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    for k in range(6):
        ev = _point_objective(pts, lambda p, k=k: float(p[k] @ p[k]))
        d = verify.central_difference(ev, [k], dirs[k:k + 1], 1e-5)[0]
        assert d == pytest.approx(2 * pts[k] @ dirs[k], abs=1e-9)


def test_cd_second_order_in_step():
    pts = np.array([[0.3, 0.1]])
    f = lambda p: float(np.sin(50 * p[0, 0]) + p[0, 1] ** 3)
    exact = 50 * np.cos(50 * 0.3)
    errs = [abs(verify.central_difference(_point_objective(pts, f), [0], [[1.0, 0.0]], h)[0] - exact)
            for h in (1e-4, 1e-5, 1e-6)]
    orders = np.log10(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.1)


def test_cd_failure_flagged(rng):
    pts = rng.normal(size=(3, 2))

    def ev(node, dX):
        if node == 1:
            raise RuntimeError("diverged")
        return float(np.sum((pts[node] + dX) ** 2))

    out = verify.central_difference(ev, [0, 1, 2], np.tile([1.0, 0.0], (3, 1)), 1e-5)
    assert out[1] is None and out[0] is not None and out[2] is not None


def test_sampling_skips_clamped_nodes(coarse_case):
    nodes = verify.sample_interface_nodes(coarse_case, 12)
    assert len(nodes) == 12 and len(set(nodes.tolist())) == 12
    y = coarse_case.fluid_mesh.nodes[nodes, 1]
    assert np.all(y > 0.0)
    everything = verify.sample_interface_nodes(coarse_case, None)
    assert len(everything) == len(coarse_case.f_iface) - 2


def test_perturbed_meshes_move_both_sides(coarse_case):
    node = int(coarse_case.f_iface[5])
    fm, sm = verify.perturbed_meshes(coarse_case, node, np.array([1e-5, -2e-5]))
    df = fm.nodes - coarse_case.fluid_mesh.nodes
    ds = sm.nodes - coarse_case.structure_mesh.nodes
    assert np.count_nonzero(np.any(df != 0, axis=1)) == 1
    assert np.count_nonzero(np.any(ds != 0, axis=1)) == 1
    moved = np.flatnonzero(np.any(ds != 0, axis=1))[0]
    assert np.allclose(sm.nodes[moved], fm.nodes[node], rtol=0, atol=1e-15)


def test_cd_matches_adjoint_on_coarse_beam(coarse_case, coarse_eq):
    cfg = CouplingConfig(tolerance=1e-12)
    fd = verify.FdConfig(n_samples=4)
    ref = verify.central_difference_gradient(coarse_case, DRAG, fd, coarse_eq, cfg)
    assert not ref.failed
    field, _ = verify.adjoint_gradient(coarse_case, coarse_eq, DRAG, "complete", cfg, ref.nodes)
    assert verify.relative_l2_error(field.normal_component, ref.weighted) <= 1e-4
    # the oracle is deterministic
    again = verify.central_difference_gradient(coarse_case, DRAG, fd, coarse_eq, cfg)
    assert np.array_equal(again.weighted, ref.weighted)


def test_cd_rejects_non_interface_nodes(coarse_case, coarse_eq):
    fd = verify.FdConfig(nodes=(int(coarse_case.fluid.interior_nodes[0]),))
    with pytest.raises(ValueError):
        verify.central_difference_gradient(coarse_case, DRAG, fd, coarse_eq)


def test_refinement_study_rows_and_csv(coarse_beam, coarse_case, tmp_path):
    g, fm, sm = coarse_beam
    p = tmp_path / "study.csv"
    rows = verify.refinement_study([("coarse", coarse_case)], DRAG, ("complete", "complete"),
                                   csv_path=p, comment="hash")
    assert len(rows) == 1 and rows[0]["status"] == "ok"
    assert rows[0]["gradient_error"] == 0.0
    text = p.read_text().splitlines()
    assert text[0] == "# hash"
    header = next(csv.reader([text[1]]))
    assert header[:2] == ["level", "interface_elements"] and "gradient_error" in header


def test_refinement_study_flags_failures(coarse_beam, coarse_case):
    g, fm, sm = coarse_beam
    soft = cases.beam_setup(cases.BeamPhysics(youngs_modulus=30.0), g).case(fm, sm)
    cfg = CouplingConfig(omega0=1.0, omega_max=1.0, max_iterations=30)
    rows = verify.refinement_study([("soft", soft), ("ok", coarse_case)], DRAG, config=cfg)
    assert rows[0]["status"].startswith("failed")
    assert rows[1]["status"] == "ok" and rows[1]["gradient_error"] > 0


def test_uniform_refinement_keeps_interface_matching(coarse_beam):
    g, fm, sm = coarse_beam
    f2, s2 = refine_uniform(fm), refine_uniform(sm)
    assert len(f2.tag_edges("interface")) == 2 * len(fm.tag_edges("interface"))
    a = f2.nodes[f2.interface_chain("interface")]
    b = s2.nodes[s2.interface_chain("interface")]
    assert np.array_equal(a, b)
    case = cases.beam_setup(None, g).case(f2, s2)
    assert case.maps.matching
