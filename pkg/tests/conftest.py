import numpy as np
import pytest


def dense_gauss_solve(A, b):
    """Gaussian elimination with partial pivoting, written out by hand."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = len(b)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        A[[k, p]] = A[[p, k]]
        b[[k, p]] = b[[p, k]]
        for i in range(k + 1, n):
            f = A[i, k] / A[k, k]
            A[i, k:] -= f * A[k, k:]
            b[i] -= f * b[k]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - A[i, i + 1:] @ x[i + 1:]) / A[i, i]
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def coarse_beam():
    """Coarse beam-in-channel meshes (fast enough for unit tests)."""
    from fsisens import cases
    g = cases.BeamGeometry(n_side=10, n_fillet=1, n_top=1, h_far=0.5, n_thick=2)
    return g, cases.beam_fluid_mesh(g), cases.beam_structure_mesh(g)


@pytest.fixture(scope="session")
def coarse_case(coarse_beam):
    from fsisens import cases
    g, fm, sm = coarse_beam
    return cases.beam_setup(None, g).case(fm, sm)


@pytest.fixture(scope="session")
def coarse_eq(coarse_case):
    from fsisens.coupling import run_fsi, CouplingConfig
    return run_fsi(coarse_case, CouplingConfig(tolerance=1e-12))
