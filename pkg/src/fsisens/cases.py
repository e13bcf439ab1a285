"""Mesh generators and the shipped beam-in-channel case.

Structured rectangles serve the unit tests; the beam case builds
conforming fluid and structure meshes with ``triangle`` from
pre-discretized boundaries, so interface nodes coincide exactly unless a
non-matching structure interface is requested.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .meshkit import Mesh2D, signed_areas


def rectangle_mesh(nx, ny, lx=1.0, ly=1.0, origin=(0.0, 0.0), tags=None, pattern="right"):
    """Structured triangulation of a rectangle.

    ``tags`` maps the sides ``bottom``, ``right``, ``top``, ``left`` to
    boundary tag names (default: the side names). ``pattern`` is
    ``right`` (every quad split along the same diagonal) or ``cross``
    (alternating diagonals).
    """
    tags = {s: s for s in ("bottom", "right", "top", "left")} | dict(tags or {})
    xs = origin[0] + np.linspace(0.0, lx, nx + 1)
    ys = origin[1] + np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (nx + 1) + i
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if pattern == "cross" and (i + j) % 2:
                tris += [(a, b, d), (b, c, d)]
            else:
                tris += [(a, b, c), (a, c, d)]
    edges, etags = [], []
    for i in range(nx):
        edges.append((idx(i, 0), idx(i + 1, 0)))
        etags.append(tags["bottom"])
    for j in range(ny):
        edges.append((idx(nx, j), idx(nx, j + 1)))
        etags.append(tags["right"])
    for i in range(nx, 0, -1):
        edges.append((idx(i, ny), idx(i - 1, ny)))
        etags.append(tags["top"])
    for j in range(ny, 0, -1):
        edges.append((idx(0, j), idx(0, j - 1)))
        etags.append(tags["left"])
    return Mesh2D(nodes, np.array(tris), np.array(edges), tuple(etags))


# ----------------------------------------------------------------------
# beam in channel
# ----------------------------------------------------------------------

@dataclass
class BeamGeometry:
    """Channel with a slender flexible beam clamped on the bottom wall."""

    channel_length: float = 6.0
    channel_height: float = 2.0
    beam_x: float = 2.0          # beam centre line
    beam_length: float = 1.0
    beam_thickness: float = 0.1
    fillet_radius: float = 0.025
    # interface discretization: elements per straight side, per fillet, on top
    n_side: int = 39
    n_fillet: int = 2
    n_top: int = 2
    # far-field element size and grading away from the beam
    h_far: float = 0.2
    grading: float = 0.25
    # structure through-thickness subdivisions
    n_thick: int = 4

    def refined(self, factor):
        g = BeamGeometry(**asdict(self))
        g.n_side *= factor
        g.n_fillet *= factor
        g.n_top *= factor
        g.n_thick *= factor
        g.h_far /= factor
        return g

    @property
    def interface_elements(self):
        return 2 * self.n_side + 2 * self.n_fillet + self.n_top


def _beam_interface_points(g, n_fillet=None):
    """Interface polyline from the left root, over the tip, to the right root."""
    n_fillet = g.n_fillet if n_fillet is None else n_fillet
    xl = g.beam_x - 0.5 * g.beam_thickness
    xr = g.beam_x + 0.5 * g.beam_thickness
    r = g.fillet_radius
    top = g.beam_length
    pts = []
    ys = np.linspace(0.0, top - r, g.n_side + 1)
    pts += [(xl, y) for y in ys]
    th = np.linspace(np.pi, 0.5 * np.pi, n_fillet + 1)[1:]
    pts += [(xl + r + r * np.cos(t), top - r + r * np.sin(t)) for t in th]
    xs = np.linspace(xl + r, xr - r, g.n_top + 1)[1:]
    pts += [(x, top) for x in xs]
    th = np.linspace(0.5 * np.pi, 0.0, n_fillet + 1)[1:]
    pts += [(xr - r + r * np.cos(t), top - r + r * np.sin(t)) for t in th]
    ys = np.linspace(top - r, 0.0, g.n_side + 1)[1:]
    pts += [(xr, y) for y in ys]
    return np.array(pts)


def _graded_points(a, b, h_a, h_b):
    """Points on segment a->b with sizes varying linearly from h_a to h_b.

    Nodes are equally spaced in the size-integral coordinate
    ``phi(s) = int_0^s ds'/h(s')`` so the spacing follows ``h`` smoothly.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = float(np.linalg.norm(b - a))
    dh = h_b - h_a
    if abs(dh) < 1e-12 * max(h_a, h_b):
        total = length / h_a
        inv = lambda phi: phi * h_a
    else:
        k = dh / length
        total = np.log(h_b / h_a) / k
        inv = lambda phi: (np.exp(k * phi) - 1.0) * h_a / k
    n = max(1, int(round(total)))
    s = inv(np.linspace(0.0, total, n + 1))
    s[-1] = length
    return a + np.outer(s / length, b - a)


def _size_field(g, pts):
    """Target element size: interface size near the beam, graded outward."""
    h_near = g.beam_length / g.n_side
    xl = g.beam_x - 0.5 * g.beam_thickness
    xr = g.beam_x + 0.5 * g.beam_thickness
    dx = np.maximum(np.maximum(xl - pts[:, 0], pts[:, 0] - xr), 0.0)
    dy = np.maximum(pts[:, 1] - g.beam_length, 0.0)
    dist = np.hypot(dx, dy)
    return np.minimum(h_near + g.grading * dist, g.h_far)


def _triangulate(points, segments, seg_tags, hole, size_fn, max_passes=8):
    import triangle

    data = {"vertices": points, "segments": segments,
            "segment_markers": np.arange(len(segments)).reshape(-1, 1)}
    if hole is not None:
        data["holes"] = np.array([hole])
    # 'Y' forbids Steiner points on the boundary, so the prescribed
    # boundary discretization (and the shared interface) survives
    out = triangle.triangulate(data, "pq28Y")
    for _ in range(max_passes):
        v, t = out["vertices"], out["triangles"]
        cent = v[t].mean(axis=1)
        target = 0.5 * np.sqrt(3) / 2 * size_fn(cent) ** 2
        area = np.abs(signed_areas(v, t))
        if np.all(area <= 1.25 * target):
            break
        out = triangle.triangulate({**out, "triangle_max_area": target}, "rpq28aY")
    v = out["vertices"]
    t = out["triangles"].astype(np.int64)
    if len(v) > len(points) and not np.allclose(v[:len(points)], points):
        raise RuntimeError("triangle reordered the boundary vertices")
    area = signed_areas(v, t)
    t[area < 0] = t[area < 0][:, ::-1]
    # recover boundary edges from the input segments (vertex ids unchanged)
    return v, t, segments, seg_tags


def _chain_segments(start, count, closed=False):
    seg = [(start + k, start + k + 1) for k in range(count - 1)]
    if closed:
        seg.append((start + count - 1, start))
    return seg


def beam_fluid_mesh(g=None):
    g = g or BeamGeometry()
    iface = _beam_interface_points(g)
    h_near = g.beam_length / g.n_side
    L, Hc = g.channel_length, g.channel_height
    xl, xr = iface[0, 0], iface[-1, 0]
    h_at = lambda p: float(_size_field(g, np.atleast_2d(p))[0])
    # boundary loop: interface (left root -> right root), bottom wall to the
    # outlet, outlet, top wall, inlet, bottom wall back to the left root
    pieces = []
    pieces.append((iface, "interface"))
    w1 = _graded_points((xr, 0.0), (L, 0.0), h_near, h_at((L, 0.0)))
    pieces.append((w1, "wall"))
    pieces.append((_graded_points((L, 0.0), (L, Hc), h_at((L, 0.0)), h_at((L, Hc))), "outlet"))
    xs_top = _wall_points_top(g, h_at)
    pieces.append((xs_top, "wall"))
    pieces.append((_graded_points((0.0, Hc), (0.0, 0.0), h_at((0.0, Hc)), h_at((0.0, 0.0))), "inlet"))
    pieces.append((_graded_points((0.0, 0.0), (xl, 0.0), h_at((0.0, 0.0)), h_near), "wall"))
    pts, segs, tags = [], [], []
    for arr, tag in pieces:
        arr = arr[:-1]  # the next piece starts with this endpoint
        base = len(pts)
        pts += arr.tolist()
        segs += [(base + k, base + k + 1) for k in range(len(arr))]
        tags += [tag] * len(arr)
    segs[-1] = (segs[-1][0], 0)
    pts = np.array(pts)
    segs = np.array(segs)
    # the beam is traversed clockwise as seen from the fluid: the hole is
    # inside the beam
    hole = (g.beam_x, 0.5 * g.beam_length)
    v, t, e, etags = _triangulate(pts, segs, tags, hole, lambda c: _size_field(g, c))
    return Mesh2D(v, t, e, tuple(etags))


def _wall_points_top(g, h_at):
    L, Hc = g.channel_length, g.channel_height
    # top wall from outlet to inlet, graded towards the beam abscissa
    x_mid = g.beam_x
    right = _graded_points((x_mid, Hc), (L, Hc), h_at((x_mid, Hc)), h_at((L, Hc)))[::-1]
    left = _graded_points((x_mid, Hc), (0.0, Hc), h_at((x_mid, Hc)), h_at((0.0, Hc)))
    return np.vstack([right[:-1], left])


def beam_structure_mesh(g=None, n_fillet=None):
    """Beam mesh; ``n_fillet`` different from the fluid's gives a non-matching interface."""
    g = g or BeamGeometry()
    iface = _beam_interface_points(g, n_fillet)
    xl, xr = iface[0, 0], iface[-1, 0]
    clamp = np.linspace(xr, xl, g.n_thick + 1)[1:-1]
    pts = np.vstack([iface, np.column_stack([clamp, np.zeros_like(clamp)])])
    n_if = len(iface) - 1
    segs = _chain_segments(0, len(pts), closed=True)
    tags = ["interface"] * n_if + ["clamp"] * (len(pts) - n_if)
    h_near = g.beam_length / g.n_side
    h = min(h_near, g.beam_thickness / g.n_thick)
    v, t, e, etags = _triangulate(pts, np.array(segs), tags, None,
                                  lambda c: np.full(len(c), h))
    return Mesh2D(v, t, e, tuple(etags))


@dataclass
class BeamPhysics:
    """Flow and material data of the beam case (SI units)."""

    density: float = 9.5
    reynolds: float = 10.0
    mean_inflow: float = 0.45
    youngs_modulus: float = 3.0e4
    poisson_ratio: float = 0.3
    mesh_stiffening: float = 1.0

    @property
    def viscosity(self):
        # Re based on mean inflow and beam length (1 m)
        return self.density * self.mean_inflow * 1.0 / self.reynolds


def channel_inflow(mean, height, y0=0.0):
    """Half-sine inlet profile across ``[y0, y0 + height]`` with the given mean velocity."""
    vmax = 0.5 * np.pi * mean

    def inflow(X):
        X = np.atleast_2d(X)
        v = np.zeros_like(X)
        v[:, 0] = vmax * np.sin(np.pi * (X[:, 1] - y0) / height)
        return v
    return inflow


def beam_setup(phys=None, geometry=None, mapping_method="nearest_element",
               force_mode="conservative"):
    from .coupling import FsiSetup
    from .fluid import FlowParams
    from .meshmotion import PseudoElasticParams
    from .structure import MaterialStVK

    phys = phys or BeamPhysics()
    g = geometry or BeamGeometry()
    return FsiSetup(
        flow=FlowParams(phys.density, phys.viscosity),
        material=MaterialStVK(phys.youngs_modulus, phys.poisson_ratio),
        pseudo=PseudoElasticParams(0.0, 1.0, phys.mesh_stiffening),
        inflow=channel_inflow(phys.mean_inflow, g.channel_height),
        mapping_method=mapping_method, force_mode=force_mode)


def seed_beam_case(directory, geometry=None):
    """Write the beam case (meshes plus ``beam.cfg``) into ``directory``."""
    from importlib import resources
    from pathlib import Path

    from .meshkit import save_mesh

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = geometry or BeamGeometry()
    save_mesh(beam_fluid_mesh(g), d / "fluid.fsimesh", "beam in channel: fluid domain")
    save_mesh(beam_structure_mesh(g), d / "structure.fsimesh", "beam in channel: structure")
    cfg = d / "beam.cfg"
    cfg.write_text(resources.files("fsisens").joinpath("data/beam.cfg").read_text(encoding="utf-8"),
                   encoding="utf-8")
    return cfg
