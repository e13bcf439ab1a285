"""Pseudo-linear-elastic motion of the fluid mesh.

Unknowns are nodal mesh displacements ``u``. Nodes split into interior
(``omega``), interface (``gamma``, driven by the structure) and the
remaining fixed boundary (``far``). The discrete residual is::

    r_omega = -(K u)_omega
    r_gamma = u_gamma_target - u_gamma
    r_far   = u_far_target - u_far

so the adjoint system ``(dr/du)^T psi + f = 0`` splits into an interior
transpose stiffness solve and explicit boundary entries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .fem import p1_gradients, vector_dofs, scatter_matrix, element_shape_partials, \
    scatter_nodal
from .meshkit import signed_areas


class MeshTanglingError(RuntimeError):
    def __init__(self, message, min_area):
        super().__init__(message)
        self.min_area = min_area


@dataclass(frozen=True)
class PseudoElasticParams:
    lame_lambda: float = 0.0
    lame_mu: float = 1.0
    stiffening_exponent: float = 1.0

    def __post_init__(self):
        if not self.lame_mu > 0 or self.lame_lambda < 0:
            raise ValueError("pseudo-elastic parameters need mu > 0 and lambda >= 0")


def pseudo_elastic_element(xe, lam, mu, exponent):
    """Element stiffness (ne, 6, 6), scaled by ``area ** -exponent``."""
    g, area = p1_gradients(xe)
    gg = np.einsum("eai,ebi->eab", g, g)
    K = (lam * np.einsum("eai,ebk->eaibk", g, g)
         + mu * np.einsum("eab,ik->eaibk", gg, np.eye(2))
         + mu * np.einsum("eak,ebi->eaibk", g, g))
    scale = area ** (1.0 - exponent)
    return (K * scale[:, None, None, None, None]).reshape(-1, 6, 6)


class MeshMotionProblem:
    """Dirichlet-driven pseudo-elastic mesh motion on a fixed reference mesh."""

    def __init__(self, mesh, params=None, interface_tag="interface", fd_step=1e-6):
        self.mesh = mesh
        self.params = params or PseudoElasticParams()
        self.fd_step = fd_step
        n = mesh.num_nodes
        self.interface_nodes = mesh.interface_chain(interface_tag)
        boundary = mesh.boundary_nodes()
        self.far_nodes = np.setdiff1d(boundary, self.interface_nodes)
        self.interior_nodes = mesh.interior_nodes()
        self.dofs = vector_dofs(mesh.triangles)
        self.K = self._stiffness(mesh.nodes)
        self._omega = (2 * self.interior_nodes[:, None] + np.arange(2)).ravel()
        bnd = np.concatenate([self.interface_nodes, self.far_nodes])
        self._bnd = (2 * bnd[:, None] + np.arange(2)).ravel()
        csr = self.K.csr
        self.K_oo = numkit.from_scipy(csr[self._omega][:, self._omega])
        self.K_ob = numkit.from_scipy(csr[self._omega][:, self._bnd])
        self._lu = numkit.factorize(self.K_oo) if len(self._omega) else None
        self._n = n

    def _element_matrices(self, xe):
        p = self.params
        return pseudo_elastic_element(xe, p.lame_lambda, p.lame_mu, p.stiffening_exponent)

    def _stiffness(self, X):
        ke = self._element_matrices(X[self.mesh.triangles])
        return scatter_matrix(self.dofs, ke, 2 * self.mesh.num_nodes)

    def _boundary_vector(self, u_interface, u_far):
        ub = np.zeros((len(self.interface_nodes) + len(self.far_nodes), 2))
        ub[:len(self.interface_nodes)] = np.asarray(u_interface, float).reshape(-1, 2)
        if u_far is not None:
            u_far = np.asarray(u_far, float)
            ub[len(self.interface_nodes):] = np.broadcast_to(u_far, (len(self.far_nodes), 2))
        return ub

    def solve(self, u_interface, u_far=None, check=True):
        """Mesh displacement for interface displacements in chain order.

        ``u_far`` optionally prescribes the fixed boundary (default zero).
        Raises :class:`MeshTanglingError` if a deformed element inverts.
        """
        ub = self._boundary_vector(u_interface, u_far).reshape(-1)
        u = np.zeros(2 * self._n)
        u[self._bnd] = ub
        if self._lu is not None and np.any(ub):
            u[self._omega] = self._lu.solve(-self.K_ob.apply(ub))
        u = u.reshape(-1, 2)
        if check:
            amin = float(signed_areas(self.mesh.nodes + u, self.mesh.triangles).min())
            if amin <= 0.0:
                raise MeshTanglingError(f"mesh motion tangles the fluid mesh (min area {amin:.3e})",
                                        amin)
        return u

    def min_deformed_area(self, u):
        return float(signed_areas(self.mesh.nodes + u, self.mesh.triangles).min())

    def residual(self, u, u_interface, u_far=None, X=None):
        """Residual in node layout (N, 2); see the module docstring."""
        u = np.asarray(u, float).reshape(-1)
        K = self.K if X is None else self._stiffness(X)
        r = np.zeros(2 * self._n)
        r[self._omega] = -K.apply(u)[self._omega]
        r[self._bnd] = self._boundary_vector(u_interface, u_far).reshape(-1) - u[self._bnd]
        return r.reshape(-1, 2)

    def adjoint_complete(self, f_adj):
        """Solve ``(dr/du)^T psi + f_adj = 0`` for all nodes.

        Interior: ``K_oo^T psi_o = f_o``; boundary:
        ``psi_b = f_b - K_ob^T psi_o``.
        """
        f = np.asarray(f_adj, float).reshape(-1)
        psi = np.zeros(2 * self._n)
        if self._lu is not None:
            psi[self._omega] = self._lu.solve_transpose(f[self._omega])
        psi[self._bnd] = f[self._bnd] - self.K_ob.apply_transpose(psi[self._omega])
        return psi.reshape(-1, 2)

    def adjoint_reduced(self, f_adj):
        """Analytic adjoint with interior entries zero and boundary entries copied."""
        f = np.asarray(f_adj, float).reshape(-1)
        psi = np.zeros(2 * self._n)
        psi[self._bnd] = f[self._bnd]
        return psi.reshape(-1, 2)

    def adjoint_residual(self, psi, f_adj):
        """Relative residual of ``(dr/du)^T psi + f_adj``."""
        psi = np.asarray(psi, float).reshape(-1)
        f = np.asarray(f_adj, float).reshape(-1)
        res = f.copy()
        w = np.zeros_like(psi)
        w[self._omega] = psi[self._omega]
        res -= self.K.apply_transpose(w)
        res[self._bnd] -= psi[self._bnd]
        nf = np.linalg.norm(f)
        return float(np.linalg.norm(res) / (nf if nf > 0 else 1.0))

    def shape_sensitivity(self, u, psi):
        """Partial of ``psi . r`` w.r.t. the reference coordinates (N, 2).

        Only the interior rows ``-(K(X) u)_omega`` depend on the coordinates.
        """
        tris = self.mesh.triangles
        mask = np.zeros((self._n, 2))
        mask[self.interior_nodes] = 1.0
        w = (np.asarray(psi, float).reshape(-1, 2) * mask)[tris].reshape(-1, 6)
        ue = np.asarray(u, float).reshape(-1, 2)[tris].reshape(-1, 6)
        active = np.flatnonzero(np.any(w != 0.0, axis=1))
        if active.size == 0:
            return np.zeros((self._n, 2))
        ue_a = ue[active]

        def re(xe):
            return -np.einsum("emn,en->em", self._element_matrices(xe), ue_a)

        d = element_shape_partials(re, self.mesh.nodes[tris[active]], w[active], self.fd_step)
        return scatter_nodal(tris[active], d, self._n)
