"""2D triangular meshes with tagged boundary polylines.

Mesh file format (ASCII)::

    fsimesh 1
    # comments start with '#'
    nodes N
    x y            (N lines)
    triangles M
    i j k          (M lines, 0-based)
    boundary K
    i j tagname    (K lines)

Coordinates of the undeformed configuration are stored on the mesh; a
deformed configuration is simply an ``(N, 2)`` coordinate array
``x = X + u`` passed alongside it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh content; ``problems`` lists every offending entity."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class MeshParseError(MeshError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def signed_areas(coords, triangles):
    a, b, c = (coords[triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


@dataclass(frozen=True)
class Mesh2D:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple
    _edge_owner: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        for arr in (nodes, tris, edges):
            arr.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_edges", edges)
        object.__setattr__(self, "edge_tags", tuple(str(t) for t in self.edge_tags))
        if len(self.edge_tags) != len(edges):
            raise MeshError("one tag is required per boundary edge")
        problems = _validate(nodes, tris, edges)
        if problems:
            raise MeshError(f"invalid mesh: {problems[0]}"
                            + (f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""),
                            problems)
        object.__setattr__(self, "_edge_owner", _edge_owners(tris, edges))

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def tags(self):
        return tuple(sorted(set(self.edge_tags)))

    def validate(self):
        """Re-run every structural check; returns ``self`` for chaining."""
        problems = _validate(self.nodes, self.triangles, self.boundary_edges)
        if problems:
            raise MeshError(f"invalid mesh: {problems[0]}", problems)
        return self

    def _tag_mask(self, tags):
        if isinstance(tags, str):
            tags = (tags,)
        unknown = [t for t in tags if t not in self.edge_tags]
        if unknown:
            raise KeyError(f"unknown boundary tag(s) {unknown}; mesh has {list(self.tags)}")
        return np.array([t in tags for t in self.edge_tags], dtype=bool)

    def tag_edges(self, tags):
        return self.boundary_edges[self._tag_mask(tags)]

    def tag_nodes(self, tags):
        return np.unique(self.tag_edges(tags))

    def boundary_nodes(self):
        return np.unique(self.boundary_edges)

    def interior_nodes(self):
        mask = np.ones(self.num_nodes, dtype=bool)
        mask[self.boundary_nodes()] = False
        return np.flatnonzero(mask)

    def oriented_edges(self, tags):
        """Edges of ``tags`` oriented so the domain lies on their left.

        With that orientation the outward normal of edge ``(i, j)`` is
        ``(dy, -dx)``.
        """
        mask = self._tag_mask(tags)
        edges = self.boundary_edges[mask].copy()
        owner = self._edge_owner[mask]
        tri = self.triangles[owner]
        # edge (i, j) follows the counter-clockwise order of its triangle
        # exactly when j is the successor of i
        pos_i = np.argmax(tri == edges[:, :1], axis=1)
        succ = tri[np.arange(len(tri)), (pos_i + 1) % 3]
        flip = succ != edges[:, 1]
        edges[flip] = edges[flip][:, ::-1]
        return edges

    def polyline(self, tags):
        """Node chain of an open or closed polyline along the domain boundary."""
        edges = self.oriented_edges(tags)
        nxt = {int(i): int(j) for i, j in edges}
        prev = {int(j): int(i) for i, j in edges}
        if len(nxt) != len(edges) or len(prev) != len(edges):
            raise MeshError(f"boundary {tags!r} is not a simple polyline")
        starts = [i for i in nxt if i not in prev]
        if len(starts) > 1:
            raise MeshError(f"boundary {tags!r} has {len(starts)} disconnected pieces")
        start = starts[0] if starts else min(nxt)
        chain = [start]
        while chain[-1] in nxt and len(chain) <= len(edges):
            nx = nxt[chain[-1]]
            if nx == start:
                break
            chain.append(nx)
        # an open chain visits len(edges) + 1 nodes, a closed one len(edges)
        if len(chain) != len(edges) + (1 if starts else 0):
            raise MeshError(f"boundary {tags!r} has disconnected pieces")
        return np.array(chain, dtype=np.int64)

    def interface_chain(self, tag):
        """Polyline nodes of ``tag`` in a mesh-independent order.

        Open chains start at the lexicographically smaller end point (by x,
        then y); closed chains start at the smallest node and run
        counter-clockwise. Two meshes sharing a curve therefore list
        coincident nodes in the same order.
        """
        chain = self.polyline(tag)
        P = self.nodes[chain]
        edges = self.oriented_edges(tag)
        closed = len(chain) == len(edges)
        if not closed:
            if tuple(P[-1]) < tuple(P[0]):
                chain = chain[::-1]
            return chain
        start = min(range(len(chain)), key=lambda k: tuple(P[k]))
        chain = np.roll(chain, -start)
        P = self.nodes[chain]
        area = 0.5 * np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1])
        if area < 0:
            chain = np.concatenate([chain[:1], chain[1:][::-1]])
        return chain

    def with_nodes(self, nodes):
        """Copy of the mesh with new undeformed coordinates (same topology)."""
        return Mesh2D(nodes, self.triangles, self.boundary_edges, self.edge_tags)

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.nodes.max(axis=0) - self.nodes.min(axis=0)))


def _edge_owners(tris, edges):
    lookup = {}
    for t, (a, b, c) in enumerate(tris.tolist()):
        for i, j in ((a, b), (b, c), (c, a)):
            lookup.setdefault((min(i, j), max(i, j)), []).append(t)
    return np.array([lookup[(min(i, j), max(i, j))][0] for i, j in edges.tolist()],
                    dtype=np.int64) if len(edges) else np.zeros(0, dtype=np.int64)


def _validate(nodes, tris, edges):
    problems = []
    n = nodes.shape[0]
    if not np.all(np.isfinite(nodes)):
        problems.append("non-finite node coordinates")
    bad = np.flatnonzero(np.any((tris < 0) | (tris >= n), axis=1))
    problems += [f"triangle {t} references a node outside 0..{n - 1}" for t in bad]
    if bad.size:
        return problems
    area = signed_areas(nodes, tris)
    problems += [f"triangle {t} has non-positive area {area[t]:.3e}"
                 for t in np.flatnonzero(area <= 0.0)]
    count = {}
    for a, b, c in tris.tolist():
        for i, j in ((a, b), (b, c), (c, a)):
            key = (min(i, j), max(i, j))
            count[key] = count.get(key, 0) + 1
    seen = set()
    for k, (i, j) in enumerate(edges.tolist()):
        key = (min(i, j), max(i, j))
        if key in seen:
            problems.append(f"boundary edge {k} ({i}, {j}) is listed twice")
        seen.add(key)
        c = count.get(key, 0)
        if c == 0:
            problems.append(f"boundary edge {k} ({i}, {j}) is dangling: not an edge of any triangle")
        elif c > 1:
            problems.append(f"boundary edge {k} ({i}, {j}) is shared by {c} triangles")
    return problems


# ----------------------------------------------------------------------
# geometry on a given configuration
# ----------------------------------------------------------------------

def edge_normals(mesh, coords, tags):
    """Outward unit normals and lengths of the oriented edges of ``tags``."""
    edges = mesh.oriented_edges(tags)
    d = coords[edges[:, 1]] - coords[edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    return edges, normal, length


def boundary_normals(mesh, coords, tag):
    """Outward unit normal at every node of boundary ``tag``.

    Returns ``(node_ids, normals)``. A node normal averages the unit
    normals of its (at most two) incident edges of the tag weighted by the
    angle they subtend at the node; in 2D both edges subtend the same
    angle, so the result is the bisector of the two edge normals.
    """
    coords = np.asarray(coords, dtype=float)
    edges, normal, _ = edge_normals(mesh, coords, tag)
    nodes = np.unique(edges)
    acc = np.zeros((mesh.num_nodes, 2))
    np.add.at(acc, edges[:, 0], normal)
    np.add.at(acc, edges[:, 1], normal)
    out = acc[nodes]
    norm = np.linalg.norm(out, axis=1)
    if np.any(norm < 1e-12):
        raise MeshError(f"boundary {tag!r} folds back on itself; node normal undefined")
    return nodes, out / norm[:, None]


def area_normals(mesh, coords, tags):
    """Edge-length-weighted nodal area normals (outward), full-size array.

    Node ``a`` receives half the outward normal times length of each
    incident tagged edge, i.e. the exact integral of its hat function
    times the normal along the polyline.
    """
    coords = np.asarray(coords, dtype=float)
    edges = mesh.oriented_edges(tags)
    d = coords[edges[:, 1]] - coords[edges[:, 0]]
    half = 0.5 * np.column_stack([d[:, 1], -d[:, 0]])
    A = np.zeros((mesh.num_nodes, 2))
    np.add.at(A, edges[:, 0], half)
    np.add.at(A, edges[:, 1], half)
    return A


def min_area(coords, triangles):
    return float(signed_areas(np.asarray(coords, dtype=float), triangles).min())


# ----------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------

def refine_uniform(mesh):
    """Split every triangle into four at edge midpoints (nested refinement).

    Boundary edges split into two children with the parent tag; the
    original nodes keep their ids.
    """
    tris = mesh.triangles
    n = mesh.num_nodes
    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = n + inv.reshape(3, -1).T          # midpoint ids of edges 01, 12, 20
    nodes = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])])
    a, b, c = tris.T
    m01, m12, m20 = mid.T
    new_tris = np.concatenate([
        np.column_stack([a, m01, m20]), np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]), np.column_stack([m01, m12, m20])])
    key = {tuple(k): n + i for i, k in enumerate(uniq.tolist())}
    edges, tags = [], []
    for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.edge_tags):
        m = key[(min(i, j), max(i, j))]
        edges += [(i, m), (m, j)]
        tags += [t, t]
    return Mesh2D(nodes, new_tris, np.array(edges, dtype=np.int64), tuple(tags))


def _tokens(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def load_mesh(path):
    """Parse and validate a mesh file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    it = _tokens(path)

    def take(expected):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshParseError(f"unexpected end of file, expected '{expected}'") from None
        return lineno, tok

    lineno, tok = take("fsimesh 1")
    if tok != ["fsimesh", "1"]:
        raise MeshParseError(f"bad header {' '.join(tok)!r}, expected 'fsimesh 1'", lineno)

    def section(name, width, conv):
        lineno, tok = take(f"{name} <count>")
        if len(tok) != 2 or tok[0] != name:
            raise MeshParseError(f"expected '{name} <count>'", lineno)
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad count {tok[1]!r}", lineno) from None
        rows = []
        for _ in range(count):
            lineno, tok = take(f"{name} entry")
            if len(tok) != width:
                raise MeshParseError(f"{name} entry needs {width} fields, got {len(tok)}", lineno)
            try:
                rows.append([c(t) for c, t in zip(conv, tok)])
            except ValueError as exc:
                raise MeshParseError(str(exc), lineno) from None
        return rows

    nodes = section("nodes", 2, (float, float))
    tris = section("triangles", 3, (int, int, int))
    bnd = section("boundary", 3, (int, int, str))
    rest = next(it, None)
    if rest is not None:
        raise MeshParseError("trailing content after boundary section", rest[0])
    edges = np.array([b[:2] for b in bnd], dtype=np.int64).reshape(-1, 2)
    n = len(nodes)
    bad = [k for k, (i, j) in enumerate(edges.tolist()) if not (0 <= i < n and 0 <= j < n)]
    if bad:
        raise MeshError(f"boundary edge {bad[0]} references a missing node",
                        [f"boundary edge {k} references a missing node" for k in bad])
    return Mesh2D(np.array(nodes).reshape(-1, 2), np.array(tris).reshape(-1, 3),
                  edges, tuple(b[2] for b in bnd))


def save_mesh(mesh, path, header_comment=None):
    path = Path(path)
    lines = ["fsimesh 1"]
    if header_comment:
        lines += [f"# {c}" for c in header_comment.splitlines()]
    lines.append(f"nodes {mesh.num_nodes}")
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes.tolist()]
    lines.append(f"triangles {mesh.num_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.edge_tags)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def export_vtk(mesh, coords, fields, path, title="fsisens"):
    """Write a legacy ASCII VTK 2.0 unstructured grid.

    ``fields`` maps names to nodal arrays of shape ``(N,)`` (scalars) or
    ``(N, 2)`` (vectors, padded with a zero z-component).
    """
    coords = mesh.nodes if coords is None else np.asarray(coords, dtype=float)
    n = mesh.num_nodes
    if coords.shape != (n, 2):
        raise ValueError(f"coordinates of shape {coords.shape} for {n} nodes")
    prepared = []
    for name, values in (fields or {}).items():
        values = np.asarray(values, dtype=float)
        if values.shape[0] != n or values.ndim > 2 or (values.ndim == 2 and values.shape[1] != 2):
            raise ValueError(f"field {name!r} has shape {values.shape}, expected ({n},) or ({n}, 2)")
        prepared.append((name.replace(" ", "_"), values))
    out = ["# vtk DataFile Version 2.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    out += [f"{x:.12g} {y:.12g} 0" for x, y in coords.tolist()]
    m = mesh.num_triangles
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m
    if prepared:
        out.append(f"POINT_DATA {n}")
        for name, values in prepared:
            if values.ndim == 1:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [f"{v:.12g}" for v in values.tolist()]
            else:
                out.append(f"VECTORS {name} double")
                out += [f"{a:.12g} {b:.12g} 0" for a, b in values.tolist()]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
    return Path(path)


def read_vtk_counts(path):
    """Point and cell counts of a legacy VTK file written by :func:`export_vtk`."""
    points = cells = None
    point_data = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "POINTS":
            points = int(tok[1])
        elif tok[0] == "CELLS":
            cells = int(tok[1])
        elif tok[0] == "POINT_DATA":
            point_data = int(tok[1])
    return {"points": points, "cells": cells, "point_data": point_data}
