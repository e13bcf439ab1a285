"""Transfer operators between fluid and structure interface polylines.

An operator ``H`` (target nodes x source nodes) maps nodal fields from
the source to the target interface. Consistent transfer applies ``H``
(constants are reproduced because rows sum to one); conservative transfer
applies ``H^T`` in the opposite direction, so that the virtual work
``(H u)^T f = u^T (H^T f)`` is preserved. Nodes are indexed in the
interface chain order of their mesh.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import numkit

METHODS = ("nearest_element", "mortar")
FORCE_MODES = ("conservative", "consistent")

_GAUSS_X = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 9.0


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class InterfaceCurve:
    """Polyline with node ids (chain order) and coordinates."""
    nodes: np.ndarray
    coords: np.ndarray
    edges: np.ndarray

    @classmethod
    def from_mesh(cls, mesh, tag, coords=None):
        chain = mesh.interface_chain(tag)
        xy = (mesh.nodes if coords is None else coords)[chain]
        n = len(chain)
        closed = n == len(mesh.tag_edges(tag))
        edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        if closed:
            edges = np.vstack([edges, [n - 1, 0]])
        return cls(chain, np.asarray(xy, float), edges)

    @classmethod
    def from_points(cls, coords, closed=False):
        coords = np.asarray(coords, float)
        n = len(coords)
        edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        if closed:
            edges = np.vstack([edges, [n - 1, 0]])
        return cls(np.arange(n), coords, edges)

    def __len__(self):
        return len(self.coords)


@dataclass(frozen=True)
class MappingOperator:
    H: numkit.SparseMatrix
    method: str
    source: InterfaceCurve
    target: InterfaceCurve

    def map_consistent(self, field):
        """Source field -> target field (``H @ field``)."""
        return self.H.apply(np.asarray(field, float))

    def map_conservative(self, force):
        """Target-side forces -> source-side forces (``H^T @ force``)."""
        force = np.asarray(force, float)
        if force.shape[0] != self.H.rows:
            raise MappingError(f"force field with {force.shape[0]} rows for {self.H.rows} target nodes")
        return self.H.apply_transpose(force)

    def triplets(self):
        return self.H.entries()


def _bbox_diag(*pts):
    allp = np.vstack(pts)
    return float(np.linalg.norm(allp.max(axis=0) - allp.min(axis=0)))


def _check(source, target):
    if len(source) == 0 or len(target) == 0:
        raise MappingError("source and target interfaces must be non-empty")


def _matching(source, target, tol):
    """Permutation operator when node sets coincide, else None."""
    if len(source) != len(target):
        return None
    dist, idx = cKDTree(source.coords).query(target.coords)
    if np.any(dist > tol) or len(np.unique(idx)) != len(idx):
        return None
    n = len(target)
    return numkit.assemble((np.arange(n), idx, np.ones(n)), n, n)


def project_points(source, points):
    """Nearest point on the source polyline for each query point.

    Returns ``(edge, t)`` with the projection ``A + t (B - A)`` of edge
    ``(A, B)``; ``t`` is clamped to [0, 1]. Ties go to the lowest edge index.
    """
    A = source.coords[source.edges[:, 0]]
    B = source.coords[source.edges[:, 1]]
    d = B - A
    L2 = np.einsum("ij,ij->i", d, d)
    if np.any(L2 <= 0.0):
        raise MappingError("degenerate (zero-length) source edge")
    rel = points[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("pej,ej->pe", rel, d) / L2[None, :], 0.0, 1.0)
    proj = A[None] + t[..., None] * d[None]
    dist = np.linalg.norm(points[:, None, :] - proj, axis=2)
    dmin = dist.min(axis=1, keepdims=True)
    scale = _bbox_diag(source.coords, points)
    edge = np.argmax(dist <= dmin + 1e-14 * scale, axis=1)
    return edge, t[np.arange(len(points)), edge]


def _shape_rows(source, edge, t):
    """(rows of weights) as triplet arrays over source nodes."""
    a = source.edges[edge, 0]
    b = source.edges[edge, 1]
    return a, b, 1.0 - t, t


def build_nearest_element(source, target, matching_tol=1e-12):
    """Interpolate each target node on its nearest source edge."""
    _check(source, target)
    tol = matching_tol * _bbox_diag(source.coords, target.coords)
    H = _matching(source, target, tol)
    if H is None:
        edge, t = project_points(source, target.coords)
        a, b, wa, wb = _shape_rows(source, edge, t)
        rows = np.arange(len(target))
        I = np.concatenate([rows, rows])
        J = np.concatenate([a, b])
        V = np.concatenate([wa, wb])
        keep = V != 0.0
        H = numkit.assemble((I[keep], J[keep], V[keep]), len(target), len(source))
    return MappingOperator(H, "nearest_element", source, target)


def build_mortar(source, target, matching_tol=1e-12):
    """Standard mortar operator ``H = M_tt^-1 M_ts`` on the target polyline.

    Each target edge is split at the projections of source nodes; every
    piece is integrated with 3-point Gauss, with the source field evaluated
    at the nearest source point.
    """
    _check(source, target)
    tol = matching_tol * _bbox_diag(source.coords, target.coords)
    H = _matching(source, target, tol)
    if H is not None:
        return MappingOperator(H, "mortar", source, target)
    nt, ns = len(target), len(source)
    Mtt = np.zeros((nt, nt))
    Mts = np.zeros((nt, ns))
    for i, j in target.edges:
        P0, P1 = target.coords[i], target.coords[j]
        d = P1 - P0
        L = float(np.linalg.norm(d))
        if L <= 0.0:
            raise MappingError("degenerate (zero-length) target edge")
        s = (source.coords - P0) @ d / L ** 2
        brk = np.unique(np.concatenate([[0.0, 1.0], s[(s > 1e-12) & (s < 1 - 1e-12)]]))
        for s0, s1 in zip(brk[:-1], brk[1:]):
            sg = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * _GAUSS_X
            wg = 0.5 * (s1 - s0) * L * _GAUSS_W
            phi_t = np.column_stack([1.0 - sg, sg])
            pts = P0 + sg[:, None] * d
            edge, t = project_points(source, pts)
            a, b, wa, wb = _shape_rows(source, edge, t)
            for k, node in enumerate((i, j)):
                Mtt[node, i] += np.sum(wg * phi_t[:, k] * phi_t[:, 0])
                Mtt[node, j] += np.sum(wg * phi_t[:, k] * phi_t[:, 1])
                np.add.at(Mts[node], a, wg * phi_t[:, k] * wa)
                np.add.at(Mts[node], b, wg * phi_t[:, k] * wb)
    lu = numkit.factorize(numkit.from_scipy(Mtt))
    Hd = np.column_stack([lu.solve(Mts[:, c]) for c in range(ns)])
    r, c = np.nonzero(Hd)
    H = numkit.assemble((r, c, Hd[r, c]), nt, ns)
    return MappingOperator(H, "mortar", source, target)


def build(source, target, method):
    if method == "nearest_element":
        return build_nearest_element(source, target)
    if method == "mortar":
        return build_mortar(source, target)
    raise MappingError(f"unknown mapping method {method!r}; expected one of {METHODS}")


@dataclass(frozen=True)
class MappingSet:
    """Displacement map ``H_S`` (structure -> fluid) and force map ``H_F``
    (fluid -> structure). Conservative mode uses ``H_F = H_S^T``."""
    disp: MappingOperator
    H_S: numkit.SparseMatrix
    H_F: numkit.SparseMatrix
    method: str
    force_mode: str

    @property
    def matching(self):
        H = self.H_S
        return H.rows == H.cols and np.array_equal(H.toarray(), np.eye(H.rows))


def make_mappings(fluid_mesh, structure_mesh, tag="interface", method="nearest_element",
                  force_mode="conservative", structure_tag=None):
    if force_mode not in FORCE_MODES:
        raise MappingError(f"unknown force mode {force_mode!r}; expected one of {FORCE_MODES}")
    fcurve = InterfaceCurve.from_mesh(fluid_mesh, tag)
    scurve = InterfaceCurve.from_mesh(structure_mesh, structure_tag or tag)
    disp = build(scurve, fcurve, method)
    if force_mode == "conservative":
        H_F = disp.H.transpose()
    else:
        H_F = build(fcurve, scurve, method).H
    return MappingSet(disp, disp.H, H_F, method, force_mode)
