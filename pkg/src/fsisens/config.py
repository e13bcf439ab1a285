"""INI case configuration (one section per module) and case construction.

See ``data/beam.cfg`` for the full schema with defaults. Relative paths
resolve against the directory holding the configuration file.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cases import channel_inflow
from .coupling import CouplingConfig, FsiSetup
from .fluid import FlowParams
from .mapping import METHODS, FORCE_MODES
from .meshkit import load_mesh
from .meshmotion import PseudoElasticParams
from .objectives import KINDS, ObjectiveSpec
from .structure import MaterialStVK
from .verify import FdConfig


class ConfigError(ValueError):
    """Invalid or inconsistent input; ``path`` names the offending file if any."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)


def _tags(text):
    return tuple(t.strip() for t in text.replace(",", " ").split() if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


@dataclass
class CaseConfig:
    path: Path
    fluid_mesh: Path
    structure_mesh: Path
    output_dir: Path
    flow: FlowParams
    inflow_kind: str
    inflow_mean: float
    inlet_tags: tuple
    wall_tags: tuple
    material: MaterialStVK
    clamp_tags: tuple
    pseudo: PseudoElasticParams
    interface_tag: str
    mapping_method: str
    force_mode: str
    coupling: CouplingConfig
    objectives: list
    fd: FdConfig
    fd_tolerance: float
    refine_levels: int
    digest: str = field(default="", repr=False)

    @property
    def config_hash(self):
        return self.digest

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"configuration file not found: {path}", path)
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(path.read_text(encoding="utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}", path) from None
        base = path.parent
        try:
            return cls._build(cp, path, base)
        except ConfigError:
            raise
        except (KeyError, ValueError, configparser.Error) as exc:
            raise ConfigError(f"invalid configuration {path}: {exc}", path) from None

    @classmethod
    def _build(cls, cp, path, base):
        def get(sec, key, fallback=None):
            if not cp.has_option(sec, key):
                if fallback is None:
                    raise ConfigError(f"missing option [{sec}] {key}", path)
                return fallback
            return cp.get(sec, key)

        def num(sec, key, fallback=None):
            return float(get(sec, key, None if fallback is None else str(fallback)))

        def integer(sec, key, fallback):
            return int(get(sec, key, str(fallback)))

        fluid_mesh = base / get("case", "fluid_mesh")
        structure_mesh = base / get("case", "structure_mesh")
        for p in (fluid_mesh, structure_mesh):
            if not p.is_file():
                raise ConfigError(f"mesh file not found: {p}", p)
        out = base / get("case", "output_dir", "out")

        flow = FlowParams(num("flow", "density"), num("flow", "viscosity"))
        inflow_kind = get("flow", "inflow", "half_sine")
        if inflow_kind not in ("half_sine", "none"):
            raise ConfigError(f"unknown inflow profile {inflow_kind!r}", path)
        material = MaterialStVK(num("structure", "youngs_modulus"),
                                num("structure", "poisson_ratio", 0.3))
        pseudo = PseudoElasticParams(num("meshmotion", "lame_lambda", 0.0),
                                     num("meshmotion", "lame_mu", 1.0),
                                     num("meshmotion", "stiffening_exponent", 1.0))
        method = get("mapping", "method", "nearest_element")
        if method not in METHODS:
            raise ConfigError(f"mapping method must be exactly one of {METHODS}, got {method!r}", path)
        force_mode = get("mapping", "force_mode", "conservative")
        if force_mode not in FORCE_MODES:
            raise ConfigError(f"force_mode must be one of {FORCE_MODES}, got {force_mode!r}", path)

        c = "coupling"
        coupling = CouplingConfig(
            tolerance=num(c, "tolerance", 1e-8),
            max_iterations=integer(c, "max_iterations", 100),
            omega0=num(c, "omega0", 0.5),
            omega_min=num(c, "omega_min", 0.05),
            omega_max=num(c, "omega_max", 1.5),
            formulation=get(c, "formulation", "complete"),
            adjoint_rel_tolerance=num(c, "adjoint_rel_tolerance", 1e-8),
            adjoint_max_iterations=integer(c, "adjoint_max_iterations", 100),
            coupled_adjoint=cp.getboolean(c, "coupled_adjoint", fallback=True),
            characteristic_length=num(c, "characteristic_length", 1.0))

        direction = _floats(get("objectives", "drag_direction", "1.0, 0.0"))
        objectives = []
        if cp.has_section("objectives"):
            for key, val in cp.items("objectives"):
                if key == "drag_direction":
                    continue
                if key not in KINDS:
                    raise ConfigError(f"unknown objective {key!r}; expected one of {KINDS}", path)
                w = float(val)
                if not np.isfinite(w):
                    raise ConfigError(f"objective weight for {key} is not finite", path)
                objectives.append(ObjectiveSpec(key, w, direction))
        if not objectives:
            raise ConfigError("no objectives configured", path)

        nodes = get("fd", "nodes", "").strip()
        fd = FdConfig(step=num("fd", "step", 1e-5),
                      nodes=tuple(int(t) for t in nodes.replace(",", " ").split()) or None,
                      direction=get("fd", "direction", "normal"),
                      n_samples=integer("fd", "n_samples", 12),
                      fsi_tolerance=num("fd", "fsi_tolerance", 1e-12))

        h = hashlib.sha256()
        h.update(path.read_bytes())
        h.update(fluid_mesh.read_bytes())
        h.update(structure_mesh.read_bytes())
        return cls(path=path, fluid_mesh=fluid_mesh, structure_mesh=structure_mesh,
                   output_dir=out, flow=flow, inflow_kind=inflow_kind,
                   inflow_mean=num("flow", "inflow_mean", 0.0),
                   inlet_tags=_tags(get("flow", "inlet_tags", "inlet")),
                   wall_tags=_tags(get("flow", "wall_tags", "wall")),
                   material=material, clamp_tags=_tags(get("structure", "clamp_tags", "clamp")),
                   pseudo=pseudo, interface_tag=get("mapping", "interface_tag", "interface"),
                   mapping_method=method, force_mode=force_mode, coupling=coupling,
                   objectives=objectives, fd=fd, fd_tolerance=num("fd", "tolerance", 1e-2),
                   refine_levels=integer("refine", "levels", 3), digest=h.hexdigest()[:16])

    # -- construction ---------------------------------------------------
    def load_meshes(self):
        out = []
        for p in (self.fluid_mesh, self.structure_mesh):
            try:
                out.append(load_mesh(p))
            except FileNotFoundError:
                raise ConfigError(f"mesh file not found: {p}", p) from None
            except ValueError as exc:
                raise ConfigError(f"invalid mesh {p}: {exc}", p) from None
        return tuple(out)

    def setup(self, fluid_mesh):
        inflow = None
        if self.inflow_kind == "half_sine":
            inlet = fluid_mesh.tag_nodes(self.inlet_tags) if set(self.inlet_tags) & set(fluid_mesh.tags) else []
            if len(inlet) == 0:
                raise ConfigError("half_sine inflow needs inlet boundary edges", self.fluid_mesh)
            y = fluid_mesh.nodes[inlet, 1]
            inflow = channel_inflow(self.inflow_mean, float(y.max() - y.min()), float(y.min()))
        return FsiSetup(flow=self.flow, material=self.material, pseudo=self.pseudo, inflow=inflow,
                        mapping_method=self.mapping_method, force_mode=self.force_mode,
                        interface_tag=self.interface_tag, clamp_tags=self.clamp_tags,
                        inlet_tags=self.inlet_tags, wall_tags=self.wall_tags)

    def build_case(self, meshes=None):
        fm, sm = meshes or self.load_meshes()
        for mesh, p in ((fm, self.fluid_mesh), (sm, self.structure_mesh)):
            if self.interface_tag not in mesh.tags:
                raise ConfigError(f"mesh has no '{self.interface_tag}' boundary", p)
        return self.setup(fm).case(fm, sm)
