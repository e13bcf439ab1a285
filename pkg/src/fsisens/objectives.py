"""Objective catalogue and the partial derivatives the adjoint solvers need.

Kinds:

``interface_drag``
    ``D . sum_i f_i`` over fluid interface nodes.
``power_loss``
    Net influx of total-pressure power through the far-field boundary,
    ``-sum_a (p_a + rho |v_a|^2 / 2) (A_a . v_a)`` with outward nodal area
    normals ``A_a``; positive for a dissipative flow.
``interface_energy_fluid``
    ``(H_S u_S)^T f_F`` on the fluid interface nodes.
``interface_energy_structure``
    ``u_S^T (H_F f_F)`` on the structure interface nodes.

:func:`objective_partials` returns the explicit partial derivatives
(with respect to fluid state, fluid coordinates, structural displacement
and interface force) of a weighted sum of objectives.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .meshkit import area_normals

KINDS = ("interface_drag", "power_loss", "interface_energy_fluid", "interface_energy_structure")


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    weight: float = 1.0
    direction: tuple = (1.0, 0.0)
    tags: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.weight):
            raise ValueError("objective weight must be finite")
        d = np.asarray(self.direction, float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("drag direction must be a unit vector")


@dataclass
class ObjectivePartials:
    """Explicit partials of a weighted objective.

    ``dw`` (3N fluid DOFs), ``dx`` (N, 2) fluid coordinates, ``du_s``
    (N_s, 2) structural displacement, ``df`` (n_gamma, 2) fluid interface
    force in the fluid interface chain order.
    """
    dw: np.ndarray
    dx: np.ndarray
    du_s: np.ndarray
    df: np.ndarray
    value: float = 0.0
    values: dict = field(default_factory=dict)


def eval_interface_drag(forces, direction=(1.0, 0.0)):
    return float(np.sum(np.asarray(forces, float).reshape(-1, 2) @ np.asarray(direction, float)))


def _far_data(fluid, x, tags):
    tags = tags or fluid.far_tags
    A = area_normals(fluid.mesh, x, tags)
    nodes = fluid.mesh.tag_nodes(tags)
    return A, nodes, tags


def eval_power_loss(fluid, w, x=None, tags=()):
    x = fluid.mesh.nodes if x is None else x
    A, nodes, _ = _far_data(fluid, x, tags)
    W = np.asarray(w, float).reshape(-1, 3)[nodes]
    v, p = W[:, :2], W[:, 2]
    rho = fluid.params.density
    total = p + 0.5 * rho * np.einsum("ij,ij->i", v, v)
    return float(-np.sum(total * np.einsum("ij,ij->i", A[nodes], v)))


def power_loss_partials(fluid, w, x=None, tags=()):
    """Analytic ``dJ/dw`` (3N) and ``dJ/dx`` (N, 2) of the power loss."""
    x = fluid.mesh.nodes if x is None else x
    A, nodes, tags = _far_data(fluid, x, tags)
    Wall = np.asarray(w, float).reshape(-1, 3)
    W = Wall[nodes]
    v, p = W[:, :2], W[:, 2]
    rho = fluid.params.density
    An = A[nodes]
    flux = np.einsum("ij,ij->i", An, v)
    total = p + 0.5 * rho * np.einsum("ij,ij->i", v, v)
    dw = np.zeros_like(Wall)
    dw[nodes, :2] = -(rho * v * flux[:, None] + total[:, None] * An)
    dw[nodes, 2] = -flux
    # dJ/dA_a = -total_a v_a; A_a gathers half of (dy, -dx) of each edge
    dJdA = np.zeros_like(x)
    dJdA[nodes] = -total[:, None] * v
    edges = fluid.mesh.oriented_edges(tags)
    i, j = edges[:, 0], edges[:, 1]
    s = 0.5 * (dJdA[i] + dJdA[j])  # weight on the edge normal vector (dy, -dx)
    # normal = (y_j - y_i, -(x_j - x_i))
    dx = np.zeros_like(x)
    np.add.at(dx[:, 0], j, -s[:, 1])
    np.add.at(dx[:, 0], i, s[:, 1])
    np.add.at(dx[:, 1], j, s[:, 0])
    np.add.at(dx[:, 1], i, -s[:, 0])
    return dw.reshape(-1), dx


def eval_interface_energy(u_s_gamma, forces, H, side="fluid"):
    """Interface energy; ``H`` maps structure to fluid (fluid side) or
    fluid forces to structure nodes (structure side)."""
    u = np.asarray(u_s_gamma, float).reshape(-1, 2)
    f = np.asarray(forces, float).reshape(-1, 2)
    if side == "fluid":
        return float(np.sum(H.apply(u) * f))
    if side == "structure":
        return float(np.sum(u * H.apply(f)))
    raise ValueError(f"unknown side {side!r}")


def objective_partials(specs, fluid, fluid_state, structure_u, s_iface, maps):
    """Explicit partials of ``sum_k weight_k J_k``.

    ``s_iface`` are the structure interface node ids (chain order);
    ``maps`` supplies ``H_S`` (structure -> fluid interface) and ``H_F``
    (fluid force -> structure interface).
    """
    n_s = structure_u.shape[0]
    dw = np.zeros(fluid.ndof)
    dx = np.zeros((fluid.n, 2))
    du_s = np.zeros((n_s, 2))
    df = np.zeros((len(fluid.interface_nodes), 2))
    values = {}
    total = 0.0
    x = fluid_state.coords
    f = fluid_state.forces
    u_gamma = structure_u[s_iface]
    for spec in specs:
        a = spec.weight
        if spec.kind == "interface_drag":
            val = eval_interface_drag(f, spec.direction)
            df += a * np.asarray(spec.direction, float)[None, :]
        elif spec.kind == "power_loss":
            val = eval_power_loss(fluid, fluid_state.w, x, spec.tags)
            if a != 0.0:
                gw, gx = power_loss_partials(fluid, fluid_state.w, x, spec.tags)
                dw += a * gw
                dx += a * gx
        elif spec.kind == "interface_energy_fluid":
            val = eval_interface_energy(u_gamma, f, maps.H_S, "fluid")
            df += a * maps.H_S.apply(u_gamma)
            du_s[s_iface] += a * maps.H_S.apply_transpose(f)
        else:
            val = eval_interface_energy(u_gamma, f, maps.H_F, "structure")
            df += a * maps.H_F.apply_transpose(u_gamma)
            du_s[s_iface] += a * maps.H_F.apply(f)
        values[spec.kind] = val
        total += a * val
    return ObjectivePartials(dw, dx, du_s, df, total, values)
