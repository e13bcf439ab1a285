"""Steady incompressible Navier-Stokes on P1/P1 triangles with SUPG/PSPG.

DOFs are interleaved per node as ``[vx, vy, p]``. The element residual
uses the symmetric (Cauchy) viscous form, so the natural outflow
condition is zero traction. Velocity Dirichlet rows of the assembled
residual are replaced by ``v - g``; the unconstrained momentum rows at
interface nodes give the consistent reaction forces, and the force the
fluid exerts on the structure is their negative.

Stabilization parameter per element::

    tau = 1 / (2 |v_mean| / h + 4 nu / h^2),   h = 2 sqrt(area / pi)

Quadrature is the three-point edge-midpoint rule, exact for the
quadratic integrands of the Galerkin convective term.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .fem import p1_gradients, vector_dofs, scatter_vector, element_shape_partials, \
    scatter_nodal
from .meshkit import signed_areas

log = logging.getLogger(__name__)

# shape-function values at the edge midpoints (rows: quadrature points)
_NQ = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


class FluidSolverError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class FlowParams:
    density: float
    viscosity: float

    def __post_init__(self):
        if not (self.density > 0 and self.viscosity > 0):
            raise ValueError("density and viscosity must be positive")

    @property
    def kinematic_viscosity(self):
        return self.viscosity / self.density


def ns_element(xe, ve, pe, rho, mu, convection=True, want_jacobian=True):
    """Element residuals (ne, 9) and Jacobians (ne, 9, 9).

    Local DOF order is node-major ``[vx, vy, p]``.
    """
    ne = xe.shape[0]
    g, area = p1_gradients(xe)
    w3 = area / 3.0
    vq = np.einsum("qa,eai->eqi", _NQ, ve)
    G = np.einsum("eai,eaj->eij", ve, g)
    gp = np.einsum("ea,eai->ei", pe, g)
    h = 2.0 * np.sqrt(area / np.pi)
    nu = mu / rho
    vbar = ve.mean(axis=1)
    speed = np.sqrt(np.einsum("ei,ei->e", vbar, vbar))
    denom = 4.0 * nu / h ** 2
    if convection:
        denom = denom + 2.0 * speed / h
    tau = 1.0 / denom
    if convection:
        conv = np.einsum("eij,eqj->eqi", G, vq)
        rM = rho * conv + gp[:, None, :]
        sa = np.einsum("eqj,eaj->eqa", vq, g)
    else:
        rM = np.broadcast_to(gp[:, None, :], (ne, 3, 2))

    R = np.zeros((ne, 3, 3))
    # momentum
    R[:, :, :2] += mu * area[:, None, None] * np.einsum("eij,eaj->eai", G + G.transpose(0, 2, 1), g)
    R[:, :, :2] -= (area * pe.mean(axis=1))[:, None, None] * g
    if convection:
        R[:, :, :2] += rho * w3[:, None, None] * np.einsum("qa,eqi->eai", _NQ, conv)
        R[:, :, :2] += (w3 * tau)[:, None, None] * np.einsum("eqa,eqi->eai", sa, rM)
    # continuity
    R[:, :, 2] += (w3 * (G[:, 0, 0] + G[:, 1, 1]))[:, None]
    R[:, :, 2] += (w3 * tau / rho)[:, None] * np.einsum("eai,eqi->ea", g, rM)
    if not want_jacobian:
        return R.reshape(ne, 9), None

    I2 = np.eye(2)
    J = np.zeros((ne, 3, 3, 3, 3))  # (e, a, row comp, b, col comp)
    gg = np.einsum("eaj,ebj->eab", g, g)
    # viscous
    J[:, :, :2, :, :2] += mu * area[:, None, None, None, None] * (
        np.einsum("eab,ik->eaibk", gg, I2) + np.einsum("eak,ebi->eaibk", g, g))
    # pressure gradient (mean pressure) and divergence
    J[:, :, :2, :, 2] -= (area / 3.0)[:, None, None, None] * np.broadcast_to(
        g[:, :, :, None], (ne, 3, 2, 3))
    J[:, :, 2, :, :2] += w3[:, None, None, None] * np.broadcast_to(g[:, None, :, :], (ne, 3, 3, 2))
    # PSPG pressure-pressure
    J[:, :, 2, :, 2] += (area * tau / rho)[:, None, None] * gg
    if convection:
        # d(conv_qi)/d(v_bk) = delta_ik (v_q . g_b) + G_ik N_qb
        vg = np.einsum("eqj,ebj->eqb", vq, g)
        T = (np.einsum("eqb,ik->eqbik", vg, I2)
             + np.einsum("eik,qb->eqbik", G, _NQ))
        # d(tau)/d(v_bk), identical for every local node b
        safe = np.where(speed > 0.0, speed, 1.0)
        dtau = np.where(speed[:, None] > 0.0,
                        -tau[:, None] ** 2 * (2.0 / h)[:, None] * vbar / (3.0 * safe[:, None]), 0.0)
        # Galerkin convection
        J[:, :, :2, :, :2] += rho * w3[:, None, None, None, None] * np.einsum("qa,eqbik->eaibk", _NQ, T)
        # SUPG on momentum
        supg = (np.einsum("ek,eqa,eqi->eaik", dtau, sa, rM)[:, :, :, None, :]
                + tau[:, None, None, None, None] * np.einsum("qb,eak,eqi->eaibk", _NQ, g, rM)
                + rho * tau[:, None, None, None, None] * np.einsum("eqa,eqbik->eaibk", sa, T))
        J[:, :, :2, :, :2] += w3[:, None, None, None, None] * supg
        J[:, :, :2, :, 2] += (w3 * tau)[:, None, None, None] * np.einsum("eqa,ebi->eaib", sa, g)
        # PSPG on velocity
        pspg = (np.einsum("ek,eai,eqi->eak", dtau, g, rM)[:, :, None, :]
                + rho * tau[:, None, None, None] * np.einsum("eai,eqbik->eabk", g, T))
        J[:, :, 2, :, :2] += (w3 / rho)[:, None, None, None] * pspg
    return R.reshape(ne, 9), J.reshape(ne, 9, 9)


@dataclass
class FluidState:
    w: np.ndarray
    forces: np.ndarray
    iterations: int = 0
    history: list = field(default_factory=list)
    coords: np.ndarray = field(default=None, repr=False)
    _factor: object = field(default=None, repr=False)
    _jac_full: object = field(default=None, repr=False)

    @property
    def velocity(self):
        return self.w.reshape(-1, 3)[:, :2]

    @property
    def pressure(self):
        return self.w.reshape(-1, 3)[:, 2]


class FluidProblem:
    """Boundary-value problem for the fluid on a fixed topology.

    Velocity is prescribed on ``inlet_tags`` (by ``inflow``, a function of
    the reference node coordinates returning ``(n, 2)`` velocities), and
    set to zero on ``wall_tags`` and the interface. Remaining boundary
    parts are traction free. The pressure is pinned at one node only if
    no traction-free boundary exists.
    """

    def __init__(self, mesh, params, inflow=None, inlet_tags=("inlet",), wall_tags=("wall",),
                 interface_tag="interface", convection=True, newton_tol=1e-12,
                 max_iter=25, ramp_steps=5, fd_step=1e-6):
        self.mesh = mesh
        self.params = params
        self.convection = convection
        self.newton_tol = newton_tol
        self.max_iter = max_iter
        self.ramp_steps = ramp_steps
        self.fd_step = fd_step
        n = mesh.num_nodes
        self.n = n
        self.ndof = 3 * n
        self.dofs = vector_dofs(mesh.triangles, ncomp=3)
        present = set(mesh.edge_tags)
        inlet_tags = tuple(t for t in inlet_tags if t in present)
        wall_tags = tuple(t for t in wall_tags if t in present)
        self.interface_tag = interface_tag if interface_tag in present else None
        self.interface_nodes = (mesh.interface_chain(interface_tag) if self.interface_tag
                                else np.zeros(0, dtype=np.int64))
        inlet = mesh.tag_nodes(inlet_tags) if inlet_tags else np.zeros(0, dtype=np.int64)
        noslip = np.unique(np.concatenate([
            mesh.tag_nodes(wall_tags) if wall_tags else np.zeros(0, dtype=np.int64),
            self.interface_nodes]))
        g = np.zeros((n, 3))
        if inflow is not None and inlet.size:
            g[inlet, :2] = np.asarray(inflow(mesh.nodes[inlet]), float).reshape(-1, 2)
        g[noslip, :2] = 0.0
        fixed = np.zeros((n, 3), dtype=bool)
        fixed[inlet, :2] = True
        fixed[noslip, :2] = True
        natural = set(present) - set(inlet_tags) - set(wall_tags) - {interface_tag}
        self.pinned_pressure = None
        if not natural:
            self.pinned_pressure = int(mesh.boundary_nodes()[0])
            fixed[self.pinned_pressure, 2] = True
        self.far_tags = tuple(sorted(present - {interface_tag}))
        self.fixed = fixed.reshape(-1)
        self.free = np.flatnonzero(~self.fixed)
        self.g = g.reshape(-1)
        self.boundary_nodes = mesh.boundary_nodes()
        self.interior_nodes = mesh.interior_nodes()
        # interface momentum DOFs in chain order, shape (n_gamma, 2)
        self.interface_dofs = 3 * self.interface_nodes[:, None] + np.arange(2)[None, :]

    # -- assembly ------------------------------------------------------
    def _coords(self, x):
        return self.mesh.nodes if x is None else np.asarray(x, float).reshape(-1, 2)

    def _elements(self, w, x, want_jacobian):
        x = self._coords(x)
        tris = self.mesh.triangles
        area = signed_areas(x, tris)
        if np.any(area <= 0.0):
            bad = int(np.flatnonzero(area <= 0.0)[0])
            raise FluidSolverError(f"deformed fluid element {bad} is inverted")
        W = np.asarray(w, float).reshape(-1, 3)[tris]
        return ns_element(x[tris], W[:, :, :2], W[:, :, 2], self.params.density,
                          self.params.viscosity, self.convection, want_jacobian)

    def full_residual(self, w, x=None):
        """Unconstrained assembled residual (3N)."""
        R, _ = self._elements(w, x, False)
        return scatter_vector(self.dofs, R, self.ndof)

    def residual(self, w, x=None, inflow_scale=1.0):
        r = self.full_residual(w, x)
        r[self.fixed] = np.asarray(w, float)[self.fixed] - inflow_scale * self.g[self.fixed]
        return r

    def _assemble(self, Je, constrained):
        m = 9
        I = np.repeat(self.dofs, m, axis=1).ravel()
        Jc = np.tile(self.dofs, (1, m)).ravel()
        V = Je.reshape(-1)
        if constrained:
            keep = ~self.fixed[I]
            fixed = np.flatnonzero(self.fixed)
            I = np.concatenate([I[keep], fixed])
            Jc = np.concatenate([Jc[keep], fixed])
            V = np.concatenate([V[keep], np.ones(len(fixed))])
        return numkit.assemble((I, Jc, V), self.ndof, self.ndof)

    def jacobian(self, w, x=None, constrained=True):
        R, Je = self._elements(w, x, True)
        return self._assemble(Je, constrained)

    def interface_forces(self, w, x=None):
        """Force on the structure at interface nodes (chain order), (n_gamma, 2)."""
        r = self.full_residual(w, x)
        return -r[self.interface_dofs]

    # -- primal --------------------------------------------------------
    def solve(self, x=None, w0=None):
        """Newton solve on coordinates ``x``; cold starts ramp the inflow."""
        x = self._coords(x)
        if w0 is None:
            w = np.zeros(self.ndof)
            scales = np.linspace(0.0, 1.0, self.ramp_steps + 1)[1:] if np.any(self.g) else [1.0]
        else:
            w = np.array(w0, float)
            scales = [1.0]
        history = []
        total = 0
        for s in scales:
            w, its = self._newton(w, x, s, history)
            total += its
        forces = -self.full_residual(w, x)[self.interface_dofs]
        return FluidState(w, forces, total, history, x.copy())

    def _newton(self, w, x, scale, history):
        prev = np.inf
        for it in range(self.max_iter + 1):
            R, Je = self._elements(w, x, True)
            r = scatter_vector(self.dofs, R, self.ndof)
            gross = np.linalg.norm(scatter_vector(self.dofs, np.abs(R), self.ndof))
            r[self.fixed] = w[self.fixed] - scale * self.g[self.fixed]
            rn = float(np.linalg.norm(r))
            history.append(rn)
            target = max(self.newton_tol * gross, 1e-300)
            # accept once at the roundoff floor or when a step stops paying off there
            if rn <= target or (rn > 0.5 * prev and rn <= 1e3 * target):
                return w, it
            if it == self.max_iter or not np.isfinite(rn):
                raise FluidSolverError(
                    f"fluid Newton did not converge in {self.max_iter} iterations "
                    f"(residual {rn:.3e}); try more inflow ramp steps", history)
            lu = numkit.factorize(self._assemble(Je, True))
            w = w - lu.solve(r)
            prev = rn
        return w, it

    # -- adjoint -------------------------------------------------------
    def _factor(self, state):
        if state._factor is None:
            state._factor = numkit.factorize(self.jacobian(state.w, state.coords))
        return state._factor

    def force_weight_vector(self, force_weights):
        e = np.zeros(self.ndof)
        if force_weights is not None and len(self.interface_nodes):
            e[self.interface_dofs] = np.asarray(force_weights, float).reshape(-1, 2)
        return e

    def objective_state_gradient(self, state, dJdw=None, force_weights=None):
        """Total ``dJ/dw`` of ``J(w) + c . f_gamma(w)`` (3N)."""
        grad = np.zeros(self.ndof) if dJdw is None else np.array(dJdw, float)
        e = self.force_weight_vector(force_weights)
        if np.any(e):
            if state._jac_full is None:
                state._jac_full = self.jacobian(state.w, state.coords, constrained=False)
            grad -= state._jac_full.apply_transpose(e)
        return grad

    def adjoint(self, state, dJdw=None, force_weights=None):
        """Solve ``(dr/dw)^T psi = -(dJ/dw)^T``.

        ``force_weights`` (n_gamma, 2) is the vector ``c`` of a force
        functional ``c . f_gamma`` added to the objective; it carries both
        explicit force objectives and the projected structural adjoint.
        """
        rhs = -self.objective_state_gradient(state, dJdw, force_weights)
        if not np.any(rhs):
            return np.zeros(self.ndof)
        return self._factor(state).solve_transpose(rhs)

    def adjoint_residual(self, state, psi, dJdw=None, force_weights=None):
        grad = self.objective_state_gradient(state, dJdw, force_weights)
        A = self.jacobian(state.w, state.coords)
        return numkit.relative_residual(A, psi, -grad, transpose=True)

    def shape_partials(self, state, psi, force_weights=None, dJdx=None, mode="complete"):
        """Partial of ``J + psi . r + c . f_gamma`` w.r.t. node coordinates (N, 2).

        ``reduced`` mode returns the same vector with interior rows zeroed.
        """
        if mode not in ("complete", "reduced"):
            raise ValueError(f"unknown formulation {mode!r}")
        tris = self.mesh.triangles
        weight = np.where(self.fixed, 0.0, np.asarray(psi, float)) - self.force_weight_vector(force_weights)
        We = weight[self.dofs]
        out = np.zeros((self.n, 2))
        active = np.flatnonzero(np.any(We != 0.0, axis=1))
        if active.size:
            W = state.w.reshape(-1, 3)[tris[active]]
            ve, pe = W[:, :, :2], W[:, :, 2]
            rho, mu = self.params.density, self.params.viscosity

            def re(xe):
                return ns_element(xe, ve, pe, rho, mu, self.convection, False)[0]

            d = element_shape_partials(re, state.coords[tris[active]], We[active], self.fd_step)
            out = scatter_nodal(tris[active], d, self.n)
        if dJdx is not None:
            out = out + dJdx
        if mode == "reduced":
            out[self.interior_nodes] = 0.0
        return out
