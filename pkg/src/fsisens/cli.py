"""Batch driver.

Subcommands: ``solve-fsi``, ``adjoint``, ``verify-fd``, ``refine-study``,
``map-test``, ``export-vtk``. Exit codes: 0 success, 1 numerical failure
(including a failed verification), 2 input error. Errors are reported as
JSON on stderr and in ``error.json`` in the output directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import numkit
from .cases import seed_beam_case
from .config import CaseConfig, ConfigError
from .coupling import (CouplingConfig, CouplingError, run_fsi, run_adjoint_fsi,
                       assemble_coupled_sensitivity, evaluate_objectives, write_history_csv)
from .fem import PerturbationError
from .fluid import FluidSolverError
from .mapping import METHODS, InterfaceCurve, build, make_mappings, MappingError
from .meshkit import MeshError, export_vtk, refine_uniform
from .meshmotion import MeshTanglingError
from .objectives import KINDS, ObjectiveSpec
from .structure import NewtonDivergenceError, NonPhysicalStateError
from .verify import (central_difference_gradient, relative_l2_error, refinement_study,
                     sample_interface_nodes, write_csv)

log = logging.getLogger("fsisens")

COMMANDS = ("solve-fsi", "adjoint", "verify-fd", "refine-study", "map-test", "export-vtk")
NUMERICAL = (CouplingError, FluidSolverError, NewtonDivergenceError, NonPhysicalStateError,
             MeshTanglingError, PerturbationError, numkit.SolverError)


class VerificationFailed(Exception):
    pass


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(path, data):
    Path(path).write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _all_specs(cfg):
    direction = cfg.objectives[0].direction
    return [ObjectiveSpec(k, 1.0, direction) for k in KINDS]


def _formulations(cfg, flag):
    f = flag or cfg.coupling.formulation
    return ["complete", "reduced"] if f == "both" else [f]


def _gradient_rows(field):
    return [[int(n), x, y, gx, gy, gn] for n, (x, y), (gx, gy), gn
            in zip(field.nodes, field.coords, field.gradient, field.normal_component)]


GRADIENT_HEADER = ["node", "X", "Y", "grad_x", "grad_y", "grad_normal"]


# -- commands -------------------------------------------------------------

def cmd_solve_fsi(cfg, out, args):
    case = cfg.build_case()
    rigid = case.fluid.solve()
    eq = run_fsi(case, cfg.coupling)
    vals = evaluate_objectives(case, eq, _all_specs(cfg))
    drag0 = float(np.sum(rigid.forces @ np.asarray(cfg.objectives[0].direction)))
    u_gamma = eq.structure_state.u[case.s_iface]
    metrics = {
        "config_hash": cfg.config_hash,
        "drag_undeformed": drag0,
        "drag": vals["interface_drag"],
        "drag_reduction": 1.0 - vals["interface_drag"] / drag0 if drag0 else None,
        "lift": float(np.sum(eq.forces[:, 1])),
        "power_loss": vals["power_loss"],
        "interface_energy_fluid": vals["interface_energy_fluid"],
        "interface_energy_structure": vals["interface_energy_structure"],
        "kappa": eq.kappa,
        "tip_deflection": float(np.linalg.norm(u_gamma, axis=1).max()),
        "fsi_iterations": eq.iterations,
        "interface_gap": eq.interface_gap,
        "residual_history": eq.history,
    }
    write_json(out / "metrics.json", metrics)
    title = f"fsisens config {cfg.config_hash}"
    fs = eq.fluid_state
    export_vtk(case.fluid_mesh, eq.coords, {"velocity": fs.velocity, "pressure": fs.pressure,
                                            "mesh_displacement": eq.mesh_displacement},
               out / "fluid.vtk", title)
    u = eq.structure_state.u
    export_vtk(case.structure_mesh, case.structure_mesh.nodes + u, {"displacement": u},
               out / "structure.vtk", title)
    write_history_csv(out / "history.csv", eq.history, comment=f"config {cfg.config_hash}")
    return 0


def cmd_adjoint(cfg, out, args):
    case = cfg.build_case()
    eq = run_fsi(case, cfg.coupling)
    summary = {"config_hash": cfg.config_hash, "fsi_iterations": eq.iterations,
               "objectives": {s.kind: s.weight for s in cfg.objectives}, "formulations": {}}
    fields = {}
    first = None
    for form in _formulations(cfg, args.formulation):
        b = run_adjoint_fsi(case, eq, cfg.objectives, cfg.coupling, form)
        field = assemble_coupled_sensitivity(case, b)
        fields[form] = field
        first = first or b
        write_csv(out / f"gradient_{form}.csv", GRADIENT_HEADER, _gradient_rows(field),
                  f"config {cfg.config_hash} formulation {form}")
        summary["formulations"][form] = {"adjoint_iterations": b.iterations,
                                         "adjoint_history": b.history}
        summary["objective_values"] = b.objective_values
    if len(fields) == 2:
        ref = fields["complete"].normal_component
        summary["reduced_vs_complete_error"] = (
            relative_l2_error(fields["reduced"].normal_component, ref) if np.any(ref) else None)
    write_json(out / "summary.json", summary)
    write_history_csv(out / "history.csv", eq.history, first.history,
                      comment=f"config {cfg.config_hash}")
    return 0


def cmd_verify_fd(cfg, out, args):
    case = cfg.build_case()
    tight = CouplingConfig(**{**cfg.coupling.__dict__,
                              "tolerance": min(cfg.coupling.tolerance, cfg.fd.fsi_tolerance)})
    eq = run_fsi(case, tight)
    nodes = (np.asarray(cfg.fd.nodes, dtype=np.int64) if cfg.fd.nodes
             else sample_interface_nodes(case, cfg.fd.n_samples))
    fd = central_difference_gradient(case, cfg.objectives,
                                     type(cfg.fd)(**{**cfg.fd.__dict__, "nodes": tuple(nodes)}),
                                     eq, tight)
    ref = fd.weighted
    report = {"config_hash": cfg.config_hash, "tolerance": cfg.fd_tolerance,
              "step": cfg.fd.step, "nodes": fd.nodes, "failed_nodes": fd.failed, "results": {}}
    columns, passed = {}, True
    coupled = cfg.coupling.coupled_adjoint
    for form in _formulations(cfg, args.formulation):
        label = form if coupled else f"{form}_uncoupled"
        b = run_adjoint_fsi(case, eq, cfg.objectives, tight, form)
        g = assemble_coupled_sensitivity(case, b, fd.nodes).normal_component
        err = relative_l2_error(g, ref) if np.any(ref) else float(np.linalg.norm(g))
        ok = bool(err <= cfg.fd_tolerance)
        passed &= ok
        columns[label] = g
        report["results"][label] = {"error": err, "pass": ok, "adjoint_iterations": b.iterations}
    unc_cfg = CouplingConfig(**{**tight.__dict__, "coupled_adjoint": False})
    bu = run_adjoint_fsi(case, eq, cfg.objectives, unc_cfg, "complete")
    gu = assemble_coupled_sensitivity(case, bu, fd.nodes).normal_component
    report["uncoupled_error"] = relative_l2_error(gu, ref) if np.any(ref) else None
    report["pass"] = passed
    header = ["node", "X", "Y"] + [f"adjoint_{k}" for k in columns] + ["cd"] + \
             [f"abs_error_{k}" for k in columns]
    X = case.fluid_mesh.nodes
    rows = []
    for i, n in enumerate(fd.nodes):
        rows.append([int(n), X[n, 0], X[n, 1]] + [columns[k][i] for k in columns] + [ref[i]] +
                    [abs(columns[k][i] - ref[i]) for k in columns])
    write_csv(out / "fd_comparison.csv", header, rows, f"config {cfg.config_hash}")
    write_json(out / "verify_report.json", report)
    if not passed:
        raise VerificationFailed(f"adjoint gradient error above tolerance {cfg.fd_tolerance}")
    return 0


def cmd_refine_study(cfg, out, args):
    fm, sm = cfg.load_meshes()
    levels = []
    for k in range(cfg.refine_levels):
        if k:
            fm, sm = refine_uniform(fm), refine_uniform(sm)
        levels.append((k, cfg.build_case((fm, sm))))
    forms = _formulations(cfg, args.formulation or "both")
    rows = refinement_study(levels, cfg.objectives, (forms[0], forms[-1]), cfg.coupling,
                            out / "refine_study.csv", f"config {cfg.config_hash}")
    write_json(out / "refine_study.json", {"config_hash": cfg.config_hash, "levels": rows})
    if any(r["status"] != "ok" for r in rows):
        raise CouplingError("some refinement levels failed; see refine_study.csv")
    return 0


def cmd_map_test(cfg, out, args):
    fm, sm = cfg.load_meshes()
    tag = cfg.interface_tag
    fc = InterfaceCurve.from_mesh(fm, tag)
    sc = InterfaceCurve.from_mesh(sm, tag)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(len(sc), 2))
    f = rng.normal(size=(len(fc), 2))
    report = {"config_hash": cfg.config_hash, "fluid_nodes": len(fc), "structure_nodes": len(sc)}
    for method in METHODS:
        H = build(sc, fc, method).H
        ones = H.apply(np.ones(len(sc)))
        lhs = float(np.sum(H.apply(u) * f))
        rhs = float(np.sum(u * H.apply_transpose(f)))
        maps = make_mappings(fm, sm, tag, method, "conservative")
        e_f = float(np.sum(maps.H_S.apply(u) * f))
        e_s = float(np.sum(u * maps.H_F.apply(f)))
        report[method] = {
            "constant_error": float(np.abs(ones - 1.0).max()),
            "transpose_identity_error": abs(lhs - rhs) / max(abs(lhs), 1e-300),
            "identity": bool(H.rows == H.cols and np.array_equal(H.toarray(), np.eye(H.rows))),
            "energy_mismatch": abs(e_f - e_s) / max(abs(e_f), 1e-300),
            "nnz": H.nnz,
        }
    write_json(out / "map_test.json", report)
    return 0


def cmd_export_vtk(cfg, out, args):
    title = f"fsisens config {cfg.config_hash}"
    for name, mesh in zip(("fluid_mesh", "structure_mesh"), cfg.load_meshes()):
        code = np.zeros(mesh.num_nodes)
        for k, t in enumerate(mesh.tags, start=1):
            code[mesh.tag_nodes(t)] = k
        export_vtk(mesh, None, {"boundary_tag": code}, out / f"{name}.vtk", title)
        write_json(out / f"{name}_tags.json", {"config_hash": cfg.config_hash,
                                              "codes": {t: k for k, t in enumerate(mesh.tags, 1)}})
    return 0


HANDLERS = {"solve-fsi": cmd_solve_fsi, "adjoint": cmd_adjoint, "verify-fd": cmd_verify_fd,
            "refine-study": cmd_refine_study, "map-test": cmd_map_test,
            "export-vtk": cmd_export_vtk}


def _parser():
    p = argparse.ArgumentParser(prog="fsisens", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=COMMANDS)
    p.add_argument("--config", help="case configuration (INI)")
    p.add_argument("--out", help="output directory (default: [case] output_dir)")
    p.add_argument("--formulation", choices=("complete", "reduced", "both"))
    p.add_argument("--seed-case", choices=("beam",),
                   help="write the shipped case files to --out (or the current directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(out, code, kind, message, path=None):
    err = {"status": "error", "kind": kind, "exit_code": code, "message": message}
    if path is not None:
        err["path"] = str(path)
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        if args.seed_case:
            path = seed_beam_case(out or Path("."))
            print(json.dumps({"seeded": str(path)}))
            if args.config is None:
                args.config = str(path)
        if args.command is None:
            if args.seed_case:
                return 0
            raise ConfigError("no command given")
        if args.config is None:
            raise ConfigError("--config is required")
        cfg = CaseConfig.from_file(args.config)
        out = out or cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, out, args)
    except ConfigError as exc:
        return _fail(out, 2, "input", str(exc), exc.path)
    except (MeshError, MappingError, FileNotFoundError) as exc:
        return _fail(out, 2, "input", str(exc), getattr(exc, "filename", None))
    except VerificationFailed as exc:
        return _fail(out, 1, "verification", str(exc))
    except NUMERICAL as exc:
        return _fail(out, 1, "numerical", str(exc))


if __name__ == "__main__":
    sys.exit(main())
