import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsisens import mapping
from fsisens.mapping import InterfaceCurve, build_nearest_element, build_mortar
from fsisens.cases import BeamGeometry, beam_fluid_mesh, beam_structure_mesh


def line(n, x0=0.0, x1=1.0, jitter=None):
    x = np.linspace(x0, x1, n)
    if jitter is not None:
        x[1:-1] += jitter
    return InterfaceCurve.from_points(np.column_stack([x, np.zeros(n)]))


def arc(n, r=1.0):
    t = np.linspace(0, 0.5 * np.pi, n)
    return InterfaceCurve.from_points(np.column_stack([r * np.cos(t), r * np.sin(t)]))


BUILDERS = [build_nearest_element, build_mortar]


@pytest.mark.parametrize("build", BUILDERS)
def test_identical_is_identity(build):
    c = arc(9)
    H = build(c, c).H.toarray()
    assert np.array_equal(H, np.eye(9))


def test_midpoint_weights():
    src = line(3)
    tgt = InterfaceCurve.from_points([[0.25, 0.0]])
    H = build_nearest_element(src, tgt).H.toarray()
    assert np.allclose(H, [[0.5, 0.5, 0.0]], rtol=0, atol=0)


def test_ne_clamps_outside():
    src = line(3)
    tgt = InterfaceCurve.from_points([[-0.2, 0.1], [1.3, 0.0]])
    H = build_nearest_element(src, tgt).H.toarray()
    assert np.array_equal(H, [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_ne_tie_lowest_edge():
    # point equidistant from two disjoint edges of a V-shaped polyline
    src = InterfaceCurve.from_points([[-1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    edge, t = mapping.project_points(src, np.array([[0.0, 2.0]]))
    assert edge[0] == 0


@pytest.mark.parametrize("build", BUILDERS)
def test_constant_mapped_exactly(build):
    op = build(arc(7), arc(12))
    out = op.map_consistent(np.full(7, 3.7))
    assert np.abs(out - 3.7).max() <= 1e-12


@pytest.mark.parametrize("build", BUILDERS)
def test_rows_sum_to_one(build):
    op = build(line(6, jitter=np.array([0.03, -0.02, 0.05, 0.01])), line(11))
    assert np.abs(np.asarray(op.H.csr.sum(axis=1)).ravel() - 1.0).max() <= 1e-12


def test_mortar_linear_completeness():
    src = line(6, jitter=np.array([0.03, -0.02, 0.05, 0.01]))
    tgt = line(13)
    op = build_mortar(src, tgt)
    f = 2.0 * src.coords[:, 0] - 0.3
    assert np.abs(op.map_consistent(f) - (2.0 * tgt.coords[:, 0] - 0.3)).max() <= 1e-10


def test_ne_matches_interpolation_oracle():
    src = line(5, 0.0, 2.0)
    tgt = line(17, 0.0, 2.0)
    vals = np.array([0.0, 1.0, -2.0, 0.5, 3.0])
    out = build_nearest_element(src, tgt).map_consistent(vals)
    assert np.allclose(out, np.interp(tgt.coords[:, 0], src.coords[:, 0], vals), atol=1e-14)


@pytest.mark.parametrize("build", BUILDERS)
def test_conservative_total_force(build):
    op = build(arc(8), arc(15))
    f = np.random.default_rng(0).normal(size=(15, 2))
    assert np.allclose(op.map_conservative(f).sum(axis=0), f.sum(axis=0), atol=1e-12)


def test_conservative_dimension_mismatch():
    op = build_nearest_element(arc(4), arc(6))
    with pytest.raises(mapping.MappingError):
        op.map_conservative(np.zeros((4, 2)))


def test_empty_rejected():
    with pytest.raises(mapping.MappingError):
        build_nearest_element(InterfaceCurve.from_points(np.zeros((0, 2))), arc(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**31 - 1),
       st.sampled_from(["nearest_element", "mortar"]))
def test_energy_identity(ns, nt, seed, method):
    rng = np.random.default_rng(seed)
    op = mapping.build(arc(ns), arc(nt), method)
    u = rng.normal(size=(ns, 2))
    f = rng.normal(size=(nt, 2))
    lhs = np.sum(op.map_consistent(u) * f)
    rhs = np.sum(u * op.map_conservative(f))
    assert abs(lhs - rhs) <= 1e-13 * (np.abs(u).sum() * np.abs(f).sum())


def test_beam_matching_identity_and_nonmatching():
    g = BeamGeometry()
    fm = beam_fluid_mesh(g)
    m = mapping.make_mappings(fm, beam_structure_mesh(g))
    assert m.matching
    nm = mapping.make_mappings(fm, beam_structure_mesh(g, n_fillet=5), method="mortar")
    assert not nm.matching
    assert np.abs(np.asarray(nm.H_S.csr.sum(axis=1)).ravel() - 1.0).max() <= 1e-12


def test_interface_energy_sides_equal_conservative():
    from fsisens.objectives import eval_interface_energy
    g = BeamGeometry()
    fm = beam_fluid_mesh(g)
    for method in mapping.METHODS:
        m = mapping.make_mappings(fm, beam_structure_mesh(g, n_fillet=5), method=method)
        rng = np.random.default_rng(1)
        u = rng.normal(size=(m.H_S.cols, 2))
        f = rng.normal(size=(m.H_S.rows, 2))
        ef = eval_interface_energy(u, f, m.H_S, "fluid")
        es = eval_interface_energy(u, f, m.H_F, "structure")
        assert abs(ef - es) <= 1e-12 * abs(ef)
