import numpy as np
import pytest

from fsisens.cases import rectangle_mesh
from fsisens.meshkit import Mesh2D
from fsisens.structure import MaterialStVK, StructureProblem, NonPhysicalStateError, stvk_element


def one_triangle():
    return Mesh2D([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]],
                  ("clamp", "free", "free"))


def cantilever(nx=40, ny=4, length=10.0, height=1.0):
    return rectangle_mesh(nx, ny, length, height, tags={"left": "clamp"}, pattern="cross")


def tip_load(mesh, total):
    f = np.zeros((mesh.num_nodes, 2))
    tip = mesh.tag_nodes("right")
    ys = mesh.nodes[tip, 1]
    order = np.argsort(ys)
    tip = tip[order]
    h = ys.max() - ys.min()
    for a, b in zip(tip[:-1], tip[1:]):
        l = mesh.nodes[b, 1] - mesh.nodes[a, 1]
        f[a, 1] += 0.5 * total * l / h
        f[b, 1] += 0.5 * total * l / h
    return f, tip


MAT = MaterialStVK(100.0, 0.3)


def test_material_guards():
    with pytest.raises(ValueError):
        MaterialStVK(-1.0, 0.3)
    with pytest.raises(ValueError):
        MaterialStVK(1.0, 0.5)


def test_zero_state_zero_residual():
    P = StructureProblem(cantilever(4, 2), MAT)
    n = P.mesh.num_nodes
    assert np.array_equal(P.residual(np.zeros((n, 2)), np.zeros((n, 2))), np.zeros((n, 2)))


def test_rigid_translation_no_force():
    P = StructureProblem(one_triangle(), MAT)
    u = np.tile([0.3, -0.7], (3, 1))
    assert np.allclose(P.internal_forces(u), 0.0, atol=1e-14)


def test_uniaxial_stretch_hand_formula():
    lam, mu = MAT.lame()
    stretch = 1.1
    P = StructureProblem(one_triangle(), MAT)
    X = P.mesh.nodes
    u = np.column_stack([(stretch - 1.0) * X[:, 0], np.zeros(3)])
    f = P.internal_forces(u)
    # F = diag(1.1, 1): E11 = (1.21 - 1)/2, S = lam trE I + 2 mu E, P = F S
    e11 = 0.5 * (stretch ** 2 - 1.0)
    s11, s22 = (lam + 2 * mu) * e11, lam * e11
    P11, P22 = stretch * s11, s22
    # hat-function gradients of the reference triangle and area 1/2
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    ref = 0.5 * np.column_stack([P11 * g[:, 0], P22 * g[:, 1]])
    assert np.allclose(f, ref, rtol=1e-14, atol=1e-14)


def test_inverted_element_rejected():
    P = StructureProblem(one_triangle(), MAT)
    u = np.array([[0.0, 0.0], [-2.0, 0.0], [0.0, 0.0]])
    with pytest.raises(NonPhysicalStateError):
        P.internal_forces(u)


def test_tangent_zero_is_linear_elastic():
    P = StructureProblem(one_triangle(), MAT)
    K = P.tangent(np.zeros((3, 2))).toarray()
    lam, mu = MAT.lame()
    D = np.array([[lam + 2 * mu, lam, 0], [lam, lam + 2 * mu, 0], [0, 0, mu]])
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    B = np.zeros((3, 6))
    for a in range(3):
        B[0, 2 * a] = g[a, 0]
        B[1, 2 * a + 1] = g[a, 1]
        B[2, 2 * a] = g[a, 1]
        B[2, 2 * a + 1] = g[a, 0]
    assert np.allclose(K, 0.5 * B.T @ D @ B, rtol=1e-13, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tangent_matches_fd(seed):
    mesh = cantilever(5, 3, 2.0, 1.0)
    P = StructureProblem(mesh, MAT)
    rng = np.random.default_rng(seed)
    u = 0.05 * rng.normal(size=(mesh.num_nodes, 2))
    K = P.tangent(u).toarray()
    worst = 0.0
    for j in range(K.shape[1]):
        h = 1e-7 * np.linalg.norm(u) + 1e-9
        up = u.copy().reshape(-1)
        um = up.copy()
        up[j] += h
        um[j] -= h
        col = (P.internal_forces(up) - P.internal_forces(um)).reshape(-1) / (2 * h)
        worst = max(worst, np.linalg.norm(col - K[:, j]) / np.linalg.norm(K[:, j]))
    assert worst <= 1e-6
    assert np.linalg.norm(K - K.T) / np.linalg.norm(K) <= 1e-12


def test_zero_load_zero_displacement():
    P = StructureProblem(cantilever(4, 2), MAT)
    s = P.solve(np.zeros((P.mesh.num_nodes, 2)))
    assert np.array_equal(s.u, np.zeros_like(s.u))


def test_cantilever_matches_beam_theory():
    length, height, E = 20.0, 1.0, 1e5
    mesh = cantilever(160, 8, length, height)
    P = StructureProblem(mesh, MaterialStVK(E, 0.0))
    load = 1e-3
    f, tip = tip_load(mesh, -load)
    s = P.solve(f)
    ref = load * length ** 3 / (3 * E * height ** 3 / 12)
    assert abs(-s.u[tip, 1].mean() / ref - 1.0) <= 0.05


def test_newton_residual_relative_tolerance():
    mesh = cantilever(20, 4, 5.0, 1.0)
    P = StructureProblem(mesh, MaterialStVK(1e3, 0.3))
    f, _ = tip_load(mesh, -5.0)
    s = P.solve(f)
    r = P.residual(s.u, f).reshape(-1)[P.free]
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(f)
    assert s.iterations >= 2


def test_geometric_stiffening():
    mesh = cantilever(40, 4, 10.0, 1.0)
    P = StructureProblem(mesh, MaterialStVK(2e3, 0.0))
    f, tip = tip_load(mesh, -1.0)
    d1 = -P.solve(f).u[tip, 1].mean()
    d2 = -P.solve(2 * f).u[tip, 1].mean()
    assert d1 > 0.05 * 10.0  # nonlinear regime
    assert d2 < 2 * d1


def test_adjoint_zero_rhs():
    mesh = cantilever(6, 2)
    P = StructureProblem(mesh, MAT)
    f, _ = tip_load(mesh, -0.01)
    s = P.solve(f)
    assert np.array_equal(P.adjoint(s, np.zeros_like(f)), np.zeros_like(f))


def test_adjoint_compliance_self_adjoint():
    # for J = f.u on the linear problem, K^T psi = f gives psi = u
    mesh = cantilever(10, 2)
    P = StructureProblem(mesh, MaterialStVK(1e8, 0.3))
    f, _ = tip_load(mesh, -1e-3)
    s = P.solve(f)
    psi = P.adjoint(s, f)
    assert np.linalg.norm(psi - s.u) <= 1e-6 * np.linalg.norm(s.u)


def test_adjoint_substitution():
    mesh = cantilever(10, 3)
    P = StructureProblem(mesh, MaterialStVK(50.0, 0.3))
    f, _ = tip_load(mesh, -1.0)
    s = P.solve(f)
    rhs = np.random.default_rng(3).normal(size=f.shape)
    psi = P.adjoint(s, rhs)
    assert P.adjoint_residual(s, psi, rhs) <= 1e-10


def test_shape_sens_zero_psi():
    mesh = cantilever(4, 2)
    P = StructureProblem(mesh, MAT)
    f, _ = tip_load(mesh, -0.1)
    s = P.solve(f)
    assert np.array_equal(P.shape_sensitivity(s, np.zeros_like(f)), np.zeros_like(f))


def test_shape_sens_translation_invariant():
    P = StructureProblem(one_triangle(), MAT)
    u = np.array([[0.0, 0.0], [0.05, 0.01], [-0.02, 0.03]])
    s = P.solve(np.zeros((3, 2)))
    s.u = u
    psi = np.random.default_rng(4).normal(size=(3, 2))
    g = P.shape_sensitivity(s, psi)
    assert np.allclose(g.sum(axis=0), 0.0, atol=1e-8 * np.abs(g).max())


def test_compliance_gradient_vs_cd():
    mesh = cantilever(12, 3, 6.0, 1.0)
    mat = MaterialStVK(200.0, 0.3)
    P = StructureProblem(mesh, mat)
    f, tip = tip_load(mesh, -1.0)
    s = P.solve(f)
    psi = P.adjoint(s, f)
    g = P.shape_sensitivity(s, psi)
    nodes = [n for n in range(mesh.num_nodes) if n not in P.mesh.tag_nodes("clamp")][::5]
    adj, cd = [], []
    eps = 1e-5
    for n in nodes:
        for k in range(2):
            vals = []
            for sgn in (1, -1):
                X = mesh.nodes.copy()
                X[n, k] += sgn * eps
                Pp = StructureProblem(mesh.with_nodes(X), mat)
                vals.append(np.sum(f * Pp.solve(f, s.u).u))
            cd.append((vals[0] - vals[1]) / (2 * eps))
            adj.append(g[n, k])
    adj, cd = np.array(adj), np.array(cd)
    assert np.linalg.norm(adj - cd) / np.linalg.norm(cd) <= 1e-3
