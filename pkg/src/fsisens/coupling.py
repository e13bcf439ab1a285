"""Partitioned FSI orchestration: primal loop, adjoint loop, gradient assembly.

Primal (block Gauss-Seidel, Dirichlet-Neumann)::

    relaxed structure interface displacement  u_hat
      -> fluid interface displacement H_S u_hat -> mesh motion -> x
      -> fluid solve on x -> interface forces f
      -> structure solve with H_F f -> u_S
      -> delta = u_S,gamma - u_hat ; Aitken update of u_hat

Adjoint (same loop, data flow reversed; relaxed quantity is the
structural adjoint on the interface ``psi_hat``)::

    d = H_F^T psi_hat + dJ/df
      -> fluid adjoint with force functional d . f
      -> fluid shape partials dL_F/dx (complete or reduced)
      -> mesh-motion adjoint with body force dL_F/dx
      -> f_sa = H_S^T psi_M,gamma
      -> structure adjoint K^T psi_S = dJ/du_S + f_sa
      -> delta = psi_S,gamma - psi_hat ; Aitken update

The shape gradient at interface design nodes is
``dL_F/dx + dL_M/dX_F + H_S dL_S/dX_S`` (derivatives of the mapping
matrices are not included).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .fluid import FluidProblem, FlowParams
from .mapping import make_mappings
from .meshkit import boundary_normals
from .meshmotion import MeshMotionProblem, PseudoElasticParams
from .objectives import objective_partials
from .structure import StructureProblem, MaterialStVK

log = logging.getLogger(__name__)


class CouplingError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class StagnationError(CouplingError):
    pass


@dataclass
class CouplingConfig:
    tolerance: float = 1e-8          # primal interface residual (m)
    max_iterations: int = 100
    omega0: float = 0.5
    omega_min: float = 0.05
    omega_max: float = 1.5
    formulation: str = "complete"
    adjoint_rel_tolerance: float = 1e-8
    adjoint_abs_tolerance: float = 0.0
    adjoint_max_iterations: int = 100
    coupled_adjoint: bool = True
    characteristic_length: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("coupling tolerance must be positive")
        if not 0 < self.omega0 <= 1:
            raise ValueError("initial relaxation must lie in (0, 1]")
        if self.formulation not in ("complete", "reduced"):
            raise ValueError(f"unknown formulation {self.formulation!r}")


@dataclass
class FsiSetup:
    """Physical and numerical parameters from which cases are built."""
    flow: FlowParams
    material: MaterialStVK
    pseudo: PseudoElasticParams = field(default_factory=PseudoElasticParams)
    inflow: object = None
    mapping_method: str = "nearest_element"
    force_mode: str = "conservative"
    interface_tag: str = "interface"
    clamp_tags: tuple = ("clamp",)
    inlet_tags: tuple = ("inlet",)
    wall_tags: tuple = ("wall",)
    fd_step: float = 1e-6

    def case(self, fluid_mesh, structure_mesh):
        return FsiCase(self, fluid_mesh, structure_mesh)


class FsiCase:
    """Sub-solvers and mappings built on undeformed meshes."""

    def __init__(self, setup, fluid_mesh, structure_mesh):
        self.setup = setup
        tag = setup.interface_tag
        self.fluid = FluidProblem(fluid_mesh, setup.flow, setup.inflow, setup.inlet_tags,
                                  setup.wall_tags, tag, fd_step=setup.fd_step)
        self.structure = StructureProblem(structure_mesh, setup.material, setup.clamp_tags,
                                          fd_step=setup.fd_step)
        self.motion = MeshMotionProblem(fluid_mesh, setup.pseudo, tag, fd_step=setup.fd_step)
        self.maps = make_mappings(fluid_mesh, structure_mesh, tag, setup.mapping_method,
                                  setup.force_mode)
        self.f_iface = self.fluid.interface_nodes
        self.s_iface = structure_mesh.interface_chain(tag)

    @property
    def fluid_mesh(self):
        return self.fluid.mesh

    @property
    def structure_mesh(self):
        return self.structure.mesh


@dataclass
class FsiEquilibrium:
    fluid_state: object
    structure_state: object
    mesh_displacement: np.ndarray
    coords: np.ndarray
    forces: np.ndarray
    history: list
    iterations: int
    converged: bool
    kappa: float
    interface_gap: float

    @property
    def structure_displacement(self):
        return self.structure_state.u


@dataclass
class AdjointBundle:
    psi_fluid: np.ndarray
    psi_structure: np.ndarray
    psi_mesh: np.ndarray
    dLF_dx: np.ndarray
    dLM_dX: np.ndarray
    dLS_dX: np.ndarray
    history: list
    iterations: int
    formulation: str
    objective_values: dict
    force_weights: np.ndarray = None      # d used by the last fluid adjoint
    structure_rhs: np.ndarray = None


@dataclass
class SensitivityField:
    nodes: np.ndarray
    coords: np.ndarray
    gradient: np.ndarray
    normals: np.ndarray

    @property
    def normal_component(self):
        return project_to_normal(self.gradient, self.normals)


def aitken_update(delta_prev, delta_curr, omega_prev, omega_min=0.05, omega_max=1.5):
    """Aitken relaxation factor for the next interface update."""
    dp = np.asarray(delta_prev, float).reshape(-1)
    dc = np.asarray(delta_curr, float).reshape(-1)
    diff = dc - dp
    den = float(diff @ diff)
    if den == 0.0:
        if np.any(dc):
            raise StagnationError("interface residual did not change between iterations")
        return omega_prev
    omega = -omega_prev * float(dp @ diff) / den
    return float(np.clip(omega, omega_min, omega_max))


def project_to_normal(field, normals):
    return np.einsum("ij,ij->i", np.asarray(field, float).reshape(-1, 2),
                     np.asarray(normals, float).reshape(-1, 2))


def run_fsi(case, config=None, initial=None):
    """Dirichlet-Neumann block Gauss-Seidel with Aitken relaxation."""
    config = config or CouplingConfig()
    fluid, structure, motion, maps = case.fluid, case.structure, case.motion, case.maps
    s_if = case.s_iface
    n_s = structure.mesh.num_nodes
    if initial is not None:
        u_s = initial.structure_state.u.copy()
        w = initial.fluid_state.w.copy()
    else:
        u_s = np.zeros((n_s, 2))
        w = None
    u_hat = u_s[s_if].copy()
    history = []
    delta_prev = None
    omega = config.omega0
    converged = False
    for it in range(1, config.max_iterations + 1):
        try:
            u_f_gamma = maps.H_S.apply(u_hat)
            u_mesh = motion.solve(u_f_gamma)
            x = fluid.mesh.nodes + u_mesh
            fs = fluid.solve(x, w0=w)
            w = fs.w
            f_ext = np.zeros((n_s, 2))
            f_ext[s_if] = maps.H_F.apply(fs.forces)
            ss = structure.solve(f_ext, u0=u_s)
        except Exception as exc:
            raise CouplingError(f"sub-solver failed in coupling iteration {it}: {exc}", history) from exc
        u_s = ss.u
        delta = u_s[s_if] - u_hat
        res = float(np.linalg.norm(delta))
        history.append(res)
        log.info("fsi iteration %d: |delta| = %.3e (omega %.3f)", it, res, omega)
        if res <= config.tolerance:
            converged = True
            break
        if delta_prev is not None:
            omega = aitken_update(delta_prev, delta, omega, config.omega_min, config.omega_max)
        u_hat = u_hat + omega * delta
        delta_prev = delta
    if not converged:
        raise CouplingError(f"FSI did not converge in {config.max_iterations} iterations "
                            f"(|delta| = {history[-1]:.3e})", history)
    gap = float(np.linalg.norm(maps.H_S.apply(u_s[s_if]) - u_mesh[case.f_iface]))
    kappa = float(np.linalg.norm(u_s[s_if], axis=1).max() / config.characteristic_length)
    return FsiEquilibrium(fs, ss, u_mesh, x, fs.forces, history, it, converged, kappa, gap)


def evaluate_objectives(case, eq, specs):
    p = objective_partials(specs, case.fluid, eq.fluid_state, eq.structure_state.u,
                           case.s_iface, case.maps)
    return p.values


def run_adjoint_fsi(case, eq, specs, config=None, formulation=None):
    """Partitioned adjoint loop; returns an :class:`AdjointBundle`."""
    config = config or CouplingConfig()
    formulation = formulation or config.formulation
    if formulation not in ("complete", "reduced"):
        raise ValueError(f"unknown formulation {formulation!r}")
    fluid, structure, motion, maps = case.fluid, case.structure, case.motion, case.maps
    s_if, f_if = case.s_iface, case.f_iface
    fs, ss = eq.fluid_state, eq.structure_state
    part = objective_partials(specs, fluid, fs, ss.u, s_if, maps)
    n_s = structure.mesh.num_nodes
    psi_hat = np.zeros((len(s_if), 2))
    history = []
    delta_prev = None
    delta_first = None
    omega = config.omega0
    coupled = config.coupled_adjoint
    max_it = config.adjoint_max_iterations if coupled else 1
    converged = False
    for it in range(1, max_it + 1):
        c = part.df + (maps.H_F.apply_transpose(psi_hat) if coupled else 0.0)
        psi_f = fluid.adjoint(fs, part.dw, c)
        dLF = fluid.shape_partials(fs, psi_f, c, part.dx, mode=formulation)
        if formulation == "complete":
            psi_m = motion.adjoint_complete(dLF)
        else:
            psi_m = motion.adjoint_reduced(dLF)
        rhs = part.du_s.copy()
        if coupled:
            rhs[s_if] += maps.H_S.apply_transpose(psi_m[f_if])
        psi_s = structure.adjoint(ss, rhs)
        if not coupled:
            converged = True
            history.append(0.0)
            break
        delta = psi_s[s_if] - psi_hat
        res = float(np.linalg.norm(delta))
        history.append(res)
        if delta_first is None:
            delta_first = res
        log.info("adjoint iteration %d: |delta| = %.3e", it, res)
        if res <= max(config.adjoint_abs_tolerance, config.adjoint_rel_tolerance * delta_first):
            converged = True
            break
        if delta_prev is not None:
            omega = aitken_update(delta_prev, delta, omega, config.omega_min, config.omega_max)
        psi_hat = psi_hat + omega * delta
        delta_prev = delta
    if not converged:
        raise CouplingError(f"adjoint FSI did not converge in {max_it} iterations", history)
    dLM = motion.shape_sensitivity(eq.mesh_displacement, psi_m)
    dLS = structure.shape_sensitivity(ss, psi_s)
    return AdjointBundle(psi_f, psi_s, psi_m, dLF, dLM, dLS, history, it, formulation,
                         dict(part.values), c, rhs)


def assemble_coupled_sensitivity(case, bundle, design_nodes=None):
    """Shape gradient at fluid interface design nodes (undeformed normals)."""
    f_if = case.f_iface
    if design_nodes is None:
        design_nodes = f_if
    design_nodes = np.asarray(design_nodes, dtype=np.int64)
    pos = {int(n): k for k, n in enumerate(f_if)}
    missing = [int(n) for n in design_nodes if int(n) not in pos]
    if missing:
        raise ValueError(f"design nodes {missing[:5]} are not fluid interface nodes")
    g_fluid = bundle.dLF_dx[f_if] + bundle.dLM_dX[f_if]
    g_struct = case.maps.H_S.apply(bundle.dLS_dX[case.s_iface])
    g = g_fluid + g_struct
    idx = np.array([pos[int(n)] for n in design_nodes], dtype=np.int64)
    mesh = case.fluid_mesh
    nn, normals = boundary_normals(mesh, mesh.nodes, case.setup.interface_tag)
    nmap = {int(n): k for k, n in enumerate(nn)}
    nrm = normals[[nmap[int(n)] for n in design_nodes]]
    return SensitivityField(design_nodes, mesh.nodes[design_nodes], g[idx], nrm)


def write_history_csv(path, primal_history, adjoint_history=(), comment=None):
    """Residual histories side by side; missing entries are left blank."""
    n = max(len(primal_history), len(adjoint_history))
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "primal_residual", "adjoint_residual"])
        for k in range(n):
            p = repr(float(primal_history[k])) if k < len(primal_history) else ""
            a = repr(float(adjoint_history[k])) if k < len(adjoint_history) else ""
            w.writerow([k + 1, p, a])
