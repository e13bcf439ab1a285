"""Total-Lagrangian St. Venant-Kirchhoff plane-strain structure on P1 triangles.

Residual ``r = f_ext - f_int(u, X)``. The tangent returned by
:meth:`StructureProblem.tangent` is the stiffness ``K = df_int/du``
(so ``dr/du = -K``). With the Lagrangian ``J + psi . r`` the adjoint
equation reads ``K^T psi = dJ/du`` on free DOFs; for a compliance
objective ``J = f . u`` this gives ``psi = u``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .fem import p1_gradients, vector_dofs, scatter_matrix, scatter_vector, \
    element_shape_partials, scatter_nodal

log = logging.getLogger(__name__)


class NonPhysicalStateError(RuntimeError):
    pass


class NewtonDivergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class MaterialStVK:
    youngs_modulus: float
    poisson_ratio: float
    density: float = 0.0

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")

    def lame(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E * nu / ((1 + nu) * (1 - 2 * nu)), E / (2 * (1 + nu))


def stvk_element(xe, ue, lam, mu, with_tangent=True):
    """Internal forces (ne, 6) and stiffness (ne, 6, 6) of CST elements.

    ``xe`` are reference coordinates, ``ue`` nodal displacements, both
    ``(ne, 3, 2)``. Returns ``(f, K, detF)``; ``K`` is None when not
    requested.
    """
    g, area = p1_gradients(xe)
    H = np.einsum("eai,eaj->eij", ue, g)
    F = np.eye(2)[None] + H
    detF = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    # Green strain from the displacement gradient: forming F^T F - I
    # directly cancels catastrophically for small strains
    E = 0.5 * (H + H.transpose(0, 2, 1) + np.einsum("eki,ekj->eij", H, H))
    trE = E[:, 0, 0] + E[:, 1, 1]
    S = lam * trE[:, None, None] * np.eye(2)[None] + 2.0 * mu * E
    P = np.einsum("eik,ekj->eij", F, S)
    f = area[:, None, None] * np.einsum("eij,eaj->eai", P, g)
    if not with_tangent:
        return f.reshape(-1, 6), None, detF
    Fg = np.einsum("eij,eaj->eai", F, g)
    FFt = np.einsum("eik,ejk->eij", F, F)
    gSg = np.einsum("eaj,ejl,ebl->eab", g, S, g)
    gg = np.einsum("eaj,ebj->eab", g, g)
    I2 = np.eye(2)
    K = (np.einsum("eab,ik->eaibk", gSg, I2)
         + lam * np.einsum("eai,ebk->eaibk", Fg, Fg)
         + mu * np.einsum("eik,eab->eaibk", FFt, gg)
         + mu * np.einsum("ebi,eak->eaibk", Fg, Fg))
    K *= area[:, None, None, None, None]
    return f.reshape(-1, 6), K.reshape(-1, 6, 6), detF


@dataclass
class StructureState:
    u: np.ndarray
    f_int: np.ndarray
    f_ext: np.ndarray
    iterations: int = 0
    history: list = field(default_factory=list)
    factor: object = field(default=None, repr=False)


class StructureProblem:
    """Static hyperelastic structure with clamped (zero-displacement) tags."""

    def __init__(self, mesh, material, clamp_tags=("clamp",), newton_tol=1e-10,
                 abs_tol=1e-12, max_iter=30, fd_step=1e-6):
        self.mesh = mesh
        self.material = material
        self.lam, self.mu = material.lame()
        self.newton_tol = newton_tol
        self.abs_tol = abs_tol
        self.max_iter = max_iter
        self.fd_step = fd_step
        n = mesh.num_nodes
        self.ndof = 2 * n
        self.dofs = vector_dofs(mesh.triangles)
        clamp = mesh.tag_nodes(clamp_tags)
        if clamp.size == 0:
            raise ValueError("structure needs at least one clamped node")
        fixed = np.zeros(self.ndof, dtype=bool)
        fixed[2 * clamp] = fixed[2 * clamp + 1] = True
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)

    def _elem(self, u, X=None, with_tangent=True):
        X = self.mesh.nodes if X is None else X
        tris = self.mesh.triangles
        f, K, detF = stvk_element(X[tris], u[tris], self.lam, self.mu, with_tangent)
        if np.any(detF <= 0.0):
            bad = int(np.flatnonzero(detF <= 0.0)[0])
            raise NonPhysicalStateError(f"element {bad} inverted (det F = {detF[bad]:.3e})")
        return f, K

    def internal_forces(self, u, X=None):
        f, _ = self._elem(np.asarray(u, float).reshape(-1, 2), X, with_tangent=False)
        return scatter_vector(self.dofs, f, self.ndof).reshape(-1, 2)

    def residual(self, u, f_ext, X=None):
        """``f_ext - f_int`` at every node (no boundary-condition rows)."""
        return np.asarray(f_ext, float).reshape(-1, 2) - self.internal_forces(u, X)

    def tangent(self, u):
        """Full stiffness matrix ``df_int/du`` (2N x 2N)."""
        _, K = self._elem(np.asarray(u, float).reshape(-1, 2))
        return scatter_matrix(self.dofs, K, self.ndof)

    def _reduced(self, K):
        return numkit.from_scipy(K.csr[self.free][:, self.free])

    def solve(self, f_ext, u0=None):
        f_ext = np.asarray(f_ext, float).reshape(-1, 2)
        u = np.zeros((self.mesh.num_nodes, 2)) if u0 is None else np.array(u0, float).reshape(-1, 2)
        u.reshape(-1)[self.fixed] = 0.0
        ext_scale = np.linalg.norm(f_ext)
        history = []
        prev = np.inf
        for it in range(self.max_iter + 1):
            f_int, K = self._elem(u)
            r = f_ext.reshape(-1) - scatter_vector(self.dofs, f_int, self.ndof)
            rn = float(np.linalg.norm(r[self.free]))
            # roundoff in the nodal sums is relative to the element forces,
            # which can far exceed the applied load
            gross = np.linalg.norm(scatter_vector(self.dofs, np.abs(f_int), self.ndof))
            target = max(self.newton_tol * ext_scale, 1e-14 * gross, self.abs_tol)
            history.append(rn)
            Kg = scatter_matrix(self.dofs, K, self.ndof)
            lu = numkit.factorize(self._reduced(Kg))
            # also accept a stalled iterate just above the roundoff floor
            if rn <= target or (rn > 0.5 * prev and rn <= 10.0 * target):
                break
            prev = rn
            if it == self.max_iter:
                raise NewtonDivergenceError(
                    f"structure Newton did not converge in {self.max_iter} iterations "
                    f"(residual {rn:.3e} > {target:.3e})", history)
            du = lu.solve(r[self.free])
            u.reshape(-1)[self.free] += du
        log.debug("structure converged in %d Newton steps, residual %.3e", it, rn)
        return StructureState(u, (f_ext.reshape(-1) - r).reshape(-1, 2), f_ext, it, history, lu)

    def adjoint(self, state, rhs):
        """Solve ``K^T psi = rhs`` on free DOFs; clamped entries of psi are zero."""
        rhs = np.asarray(rhs, float).reshape(-1)
        lu = state.factor or numkit.factorize(self._reduced(self.tangent(state.u)))
        psi = np.zeros(self.ndof)
        psi[self.free] = lu.solve_transpose(rhs[self.free])
        return psi.reshape(-1, 2)

    def adjoint_residual(self, state, psi, rhs):
        """Relative residual of ``K^T psi - rhs`` on free DOFs."""
        K = self._reduced(self.tangent(state.u))
        return numkit.relative_residual(K, psi.reshape(-1)[self.free],
                                        np.asarray(rhs, float).reshape(-1)[self.free], transpose=True)

    def shape_sensitivity(self, state, psi, dJdX=None):
        """Partial derivative of ``J + psi . r`` w.r.t. reference coordinates.

        Only ``-psi . f_int`` depends on the coordinates; it is differentiated
        element by element with the displacement and psi frozen.
        """
        tris = self.mesh.triangles
        ue = state.u[tris]
        w = -np.asarray(psi, float).reshape(-1, 2)[tris].reshape(-1, 6)

        def fe(xe):
            return stvk_element(xe, ue, self.lam, self.mu, with_tangent=False)[0]

        d = element_shape_partials(fe, self.mesh.nodes[tris], w, self.fd_step)
        out = scatter_nodal(tris, d, self.mesh.num_nodes)
        if dJdX is not None:
            out += dJdX
        return out
