"""Shared linear-triangle kernels.

P1 shape-function gradients, DOF scatter helpers, and the semi-analytic
element shape-derivative driver used by every discipline: the element
residual is differentiated with respect to its own node coordinates by
central differences while state and adjoint fields are held frozen.
"""
from __future__ import annotations

import numpy as np

from . import numkit


class PerturbationError(RuntimeError):
    """A finite-difference coordinate step inverted an element."""


def p1_gradients(xe):
    """Gradients of the three hat functions and signed areas.

    ``xe`` has shape ``(ne, 3, 2)``; returns ``grads`` of shape
    ``(ne, 3, 2)`` and ``area`` of shape ``(ne,)``.
    """
    x0, x1, x2 = xe[:, 0], xe[:, 1], xe[:, 2]
    d1 = x1 - x0
    d2 = x2 - x0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    inv = 1.0 / det
    # rows of the inverse Jacobian give gradients of the barycentric coords
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) * inv[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) * inv[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return grads, 0.5 * det


def mean_edge_length(xe):
    e = xe[:, [1, 2, 0]] - xe
    return np.linalg.norm(e, axis=2).mean(axis=1)


def vector_dofs(tris, ncomp=2, stride=None):
    """Global DOF ids of node-major, component-minor element vectors."""
    stride = ncomp if stride is None else stride
    return (tris[:, :, None] * stride + np.arange(ncomp)[None, None, :]).reshape(len(tris), -1)


def scatter_matrix(dofs, ke, n):
    """Assemble element matrices ``ke`` (ne, m, m) on ``dofs`` (ne, m)."""
    m = dofs.shape[1]
    I = np.repeat(dofs, m, axis=1).ravel()
    J = np.tile(dofs, (1, m)).ravel()
    return numkit.assemble((I, J, ke.reshape(-1)), n, n)


def scatter_vector(dofs, fe, n):
    out = np.zeros(n)
    np.add.at(out, dofs.ravel(), fe.ravel())
    return out


def element_shape_partials(element_residual, xe, weights, step_factor=1e-6):
    """Central-difference derivative of ``weights . R_e(xe)`` w.r.t. ``xe``.

    ``element_residual(xe)`` returns per-element residual vectors of shape
    ``(ne, m)``; ``weights`` has the same shape. Each local node and
    coordinate is perturbed in turn for all elements at once, with step
    ``step_factor`` times the element's mean edge length. Returns an array
    of shape ``(ne, 3, 2)``.
    """
    ne = xe.shape[0]
    out = np.zeros((ne, 3, 2))
    if ne == 0:
        return out
    h = step_factor * mean_edge_length(xe)
    for a in range(3):
        for k in range(2):
            xp = xe.copy()
            xm = xe.copy()
            xp[:, a, k] += h
            xm[:, a, k] -= h
            for trial in (xp, xm):
                _, area = p1_gradients(trial)
                if np.any(area <= 0.0):
                    bad = int(np.flatnonzero(area <= 0.0)[0])
                    raise PerturbationError(f"shape step inverts element {bad}")
            # difference first: the cancellation error is then independent
            # of the weights, keeping the result linear in them
            dr = element_residual(xp) - element_residual(xm)
            out[:, a, k] = np.einsum("em,em->e", weights, dr) / (2.0 * h)
    return out


def scatter_nodal(tris, elem_vals, n):
    """Sum ``(ne, 3, 2)`` element-node values into an ``(n, 2)`` array."""
    out = np.zeros((n, 2))
    np.add.at(out, tris.ravel(), elem_vals.reshape(-1, 2))
    return out
