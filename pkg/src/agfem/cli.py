"""Batch driver: convergence studies, robustness sweeps, conditioning sweeps
and single runs, emitting deterministic CSV plus SVG and VTK files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure recorded in
flagged rows.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import aggregation, assembly, bench, cutgeom, fespace, geometry, linalg
from .config import ConfigError, RunConfig, load_config
from .mesh import Box, QuadtreeMesh, refine_and_coarsen, uniform_mesh
from .plots import heatmap, loglog_plot
from .vtkio import write_mesh_vtk, write_subtriangulation_vtk


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def build_levelset(cfg: RunConfig) -> geometry.LevelSet:
    kind = cfg.geometry_kind
    if kind == "circle":
        return geometry.circle_levelset(cfg.geometry_center, cfg.geometry_radius)
    if kind == "flower":
        return geometry.flower_levelset(cfg.geometry_center, cfg.geometry_radius,
                                        cfg.geometry_flower_amplitude,
                                        cfg.geometry_flower_lobes)
    if kind == "pacman":
        th0 = cfg.geometry_sector_start
        if th0 is None:
            th0 = geometry.PACMAN_THETA0
        return geometry.pacman_levelset(cfg.geometry_center, cfg.geometry_radius,
                                        (th0, th0 + 1.5 * math.pi))
    if kind == "halfplane":
        return geometry.halfplane_levelset(cfg.geometry_normal, cfg.geometry_offset)
    raise ConfigError(f"unknown geometry kind {kind}")


def build_case(cfg: RunConfig) -> bench.ManufacturedCase:
    if cfg.benchmark == "out_fe_space":
        return bench.out_fe_space_case(cfg.order, cfg.contrast, 1.0)
    if cfg.benchmark == "fichera2d":
        th0 = cfg.geometry_sector_start
        if th0 is None:
            th0 = geometry.PACMAN_THETA0
        return bench.fichera2d_case(cfg.geometry_center, cfg.contrast, 1.0, th0)
    if cfg.benchmark == "disk_inclusion":
        return bench.disk_inclusion_case(cfg.contrast, 1.0, cfg.nu)
    raise ConfigError(f"unknown benchmark {cfg.benchmark}")


@dataclass
class RunResult:
    mesh: QuadtreeMesh
    decomp: cutgeom.CutDecomposition
    classes: dict
    space: fespace.AgFESpace
    system: linalg.SparseSystem
    solution: np.ndarray
    report: linalg.SolveReport
    errors: bench.ErrorReport
    case: bench.ManufacturedCase


def solve_single(cfg: RunConfig, mesh: Optional[QuadtreeMesh] = None,
                 want_solve: bool = True) -> RunResult:
    """Run the full pipeline on one mesh generation."""
    case = build_case(cfg)
    ls = build_levelset(cfg)
    if mesh is None:
        dom = Box(cfg.mesh_domain[0], cfg.mesh_domain[1], cfg.mesh_domain[2])
        mesh = uniform_mesh(dom, cfg.mesh_initial_level, cfg.mesh_max_level)
    decomp = cutgeom.build_decomposition(mesh, ls, cfg.cutgeom_depth)
    classes = cutgeom.classify_cells(mesh, ls, cfg.eta0, decomp)
    root_maps = {s: aggregation.build_root_map(mesh, classes, s)
                 for s in ("+", "-")}
    space = fespace.build_space(mesh, classes, root_maps, cfg.order, cfg.mode,
                                case.ncomp, case.dirichlet)
    nitsche = assembly.NitscheParams.from_material(case.material,
                                                   cfg.beta_value())
    beta_map = None
    if cfg.mode == "standard":
        beta_map = assembly.stdfe_beta_map(decomp, case.material, nitsche,
                                           cfg.order)
    system = assembly.assemble(space, decomp, classes, case.material, nitsche,
                               case.interface_data(), beta_map)
    if want_solve:
        x, report = linalg.pcg(system, cfg.solver_tol, cfg.solver_maxit)
        errors = bench.error_norms(x, space, case, decomp, case.material)
    else:
        x = np.zeros(system.n)
        report = linalg.SolveReport(0, 0.0, True)
        errors = None
    return RunResult(mesh, decomp, classes, space, system, x, report, errors,
                     case)


_CONV_HEADER = ("run_id,level_or_iter,h,n_cells,n_dofs_free,rel_h1,rel_l2,"
                "rel_energy,energy_density_l2,cg_iters,cond2_scaled,wall_ms,flag")


def _conv_row(cfg, tag, res: RunResult, cond_val, wall_ms):
    err = res.errors
    hmin = min(res.mesh.h(c) for c in res.mesh.leaves)
    ed = err.energy_density_l2 if res.case.ncomp == 2 else ""
    flag = 0 if res.report.converged else 1
    return [cfg.run_id(), tag, hmin, len(res.mesh), res.space.n_free,
            err.rel_h1, err.rel_l2, err.rel_energy, ed,
            res.report.iterations, cond_val if cond_val is not None else "",
            wall_ms, flag]


def _fit_slope(xs, ys, last=3):
    pts = [(x, y) for x, y in zip(xs, ys) if x > 0 and y > 0]
    if len(pts) < 2:
        return None
    pts = pts[-last:] if last else pts
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def cmd_converge(cfg: RunConfig, outdir: Path) -> int:
    """Uniform-sequence or AMR convergence study with slope summary."""
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    results = []
    tags = []
    if cfg.amr_enable:
        mesh = None
        for it in range(cfg.amr_iterations):
            t0 = time.perf_counter()
            res = solve_single(cfg, mesh)
            wall = int((time.perf_counter() - t0) * 1000) \
                if cfg.output_measure_time else 0
            cond_val = _maybe_cond(cfg, res)
            rows.append(_conv_row(cfg, it, res, cond_val, wall))
            results.append(res)
            tags.append(it)
            if res.errors.rel_energy <= cfg.amr_target_rel_energy:
                break
            refine, coarsen = bench.li_bettess_mark(
                res.errors.per_cell_energy, res.errors.u_energy,
                cfg.amr_target_rel_energy, res.mesh)
            refine = [c for c in refine if c.level < cfg.mesh_max_level]
            mesh = refine_and_coarsen(res.mesh, refine, coarsen)
    else:
        for level in cfg.mesh_levels:
            t0 = time.perf_counter()
            dom = Box(cfg.mesh_domain[0], cfg.mesh_domain[1], cfg.mesh_domain[2])
            mesh = uniform_mesh(dom, level, cfg.mesh_max_level)
            res = solve_single(cfg, mesh)
            wall = int((time.perf_counter() - t0) * 1000) \
                if cfg.output_measure_time else 0
            cond_val = _maybe_cond(cfg, res)
            rows.append(_conv_row(cfg, level, res, cond_val, wall))
            results.append(res)
            tags.append(level)

    sqrt_dofs = [math.sqrt(r.space.n_free) for r in results]
    slope_row = [cfg.run_id(), "slope", "", "", ""]
    for col in (5, 6, 7, 8):
        ys = [row[col] for row in rows if row[col] != ""]
        s = _fit_slope(sqrt_dofs, ys) if len(ys) == len(rows) else None
        slope_row.append(s if s is not None else "")
    slope_row += ["", "", "", 0]
    rows.append(slope_row)

    csv = outdir / "converge.csv"
    with open(csv, "w") as f:
        f.write(_CONV_HEADER + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")

    data_rows = rows[:-1]
    h1s = [row[5] for row in data_rows]
    ens = [row[7] for row in data_rows]
    note = f"H1 slope (last 3): {_fmt(_fit_slope(sqrt_dofs, h1s))}"
    loglog_plot(outdir / "converge.svg",
                [("rel H1", sqrt_dofs, h1s), ("rel energy", sqrt_dofs, ens)],
                "DOFs^(1/2)", "relative error",
                f"{cfg.benchmark} q={cfg.order} contrast={_fmt(cfg.contrast)}",
                note)
    return 3 if any(row[-1] == 1 for row in data_rows) else 0


def _maybe_cond(cfg, res: RunResult):
    if not cfg.cond_enable:
        return None
    if res.system.n > 4000:
        raise ConfigError("cond.enable requires n <= 4000 for the dense path")
    est = linalg.cond2_estimate(res.system, "symmetric-diagonal")
    return est.value


_SWEEP_HEADER = "contrast,a,rel_h1,cond2_raw,cond2_scaled,mode,capped_flag"


def _sweep_config(cfg: RunConfig, contrast: float, a: float) -> RunConfig:
    import copy
    sub = copy.deepcopy(cfg)
    sub.contrast = contrast
    base = cfg.mesh_domain[2]
    h0 = base / (1 << cfg.mesh_initial_level)
    sub.mesh_domain = (cfg.mesh_domain[0], cfg.mesh_domain[1], base + a * h0)
    return sub


def cmd_sweep(cfg: RunConfig, outdir: Path) -> int:
    """Contrast x cut-location robustness sweep at fixed cell count."""
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    grid = []
    failed = False
    for contrast in cfg.sweep_contrasts:
        grid_row = []
        for a in cfg.sweep_scalings:
            sub = _sweep_config(cfg, contrast, a)
            try:
                res = solve_single(sub)
                rel = res.errors.rel_h1
                if not res.report.converged:
                    failed = True
                cond_raw = cond_scaled = ""
                capped = 0
                if cfg.cond_enable:
                    er = linalg.cond2_estimate(res.system, "none")
                    es = linalg.cond2_estimate(res.system, "symmetric-diagonal")
                    cond_raw, cond_scaled = er.value, es.value
                    capped = 1 if (er.capped or es.capped) else 0
                rows.append([contrast, a, rel, cond_raw, cond_scaled,
                             cfg.mode, capped])
                grid_row.append(rel)
            except (linalg.IndefiniteMatrixError,
                    aggregation.IsolatedIllPosedError) as exc:
                rows.append([contrast, a, "", "", "", cfg.mode, 2])
                grid_row.append(None)
                failed = True
        grid.append(grid_row)

    with open(outdir / "sweep.csv", "w") as f:
        f.write(_SWEEP_HEADER + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    heatmap(outdir / "sweep_h1.svg", grid,
            [f"1e{int(round(math.log10(c)))}" for c in cfg.sweep_contrasts],
            [_fmt(a) for a in cfg.sweep_scalings],
            f"rel H1, {cfg.benchmark} q={cfg.order}")
    return 3 if failed else 0


def cmd_cond(cfg: RunConfig, outdir: Path) -> int:
    """Condition-number sweep over modes and scalings."""
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    grids = {}
    failed = False
    for mode in cfg.cond_modes:
        grids[mode] = {s: [] for s in cfg.cond_scalings}
        for contrast in cfg.sweep_contrasts:
            grow = {s: [] for s in cfg.cond_scalings}
            for a in cfg.sweep_scalings:
                sub = _sweep_config(cfg, contrast, a)
                sub.mode = mode
                try:
                    res = solve_single(sub, want_solve=False)
                    if res.system.n > 4000:
                        raise ConfigError(
                            f"cond sweep needs n <= 4000, got {res.system.n}")
                    vals = {}
                    capped = 0
                    for scaling in cfg.cond_scalings:
                        est = linalg.cond2_estimate(res.system, scaling)
                        vals[scaling] = est.value
                        capped = max(capped, 1 if est.capped else 0)
                    rows.append([contrast, a, "",
                                 vals.get("none", ""),
                                 vals.get("symmetric-diagonal", ""),
                                 mode, capped])
                    for scaling in cfg.cond_scalings:
                        grow[scaling].append(vals[scaling])
                    if capped:
                        failed = True
                except linalg.IndefiniteMatrixError:
                    rows.append([contrast, a, "", "", "", mode, 2])
                    for scaling in cfg.cond_scalings:
                        grow[scaling].append(None)
                    failed = True
            for scaling in cfg.cond_scalings:
                grids[mode][scaling].append(grow[scaling])

    with open(outdir / "cond.csv", "w") as f:
        f.write(_SWEEP_HEADER + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")
    for mode in cfg.cond_modes:
        for scaling in cfg.cond_scalings:
            tag = "raw" if scaling == "none" else "scaled"
            heatmap(outdir / f"cond_{mode}_{tag}.svg", grids[mode][scaling],
                    [f"1e{int(round(math.log10(c)))}" for c in cfg.sweep_contrasts],
                    [_fmt(a) for a in cfg.sweep_scalings],
                    f"cond2 ({tag}), {mode}")
    return 3 if failed else 0


def cmd_run(cfg: RunConfig, outdir: Path) -> int:
    """Single solve with VTK field exports and a one-row CSV summary."""
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = solve_single(cfg)
    wall = int((time.perf_counter() - t0) * 1000) if cfg.output_measure_time else 0

    with open(outdir / "summary.csv", "w") as f:
        f.write(_CONV_HEADER + "\n")
        f.write(",".join(_fmt(v) for v in
                         _conv_row(cfg, 0, res, _maybe_cond(cfg, res), wall))
                + "\n")

    classes = res.classes
    cell_data = {
        "eta_plus": {c: classes[c].eta_plus for c in res.mesh.leaves_sorted},
        "eta_minus": {c: classes[c].eta_minus for c in res.mesh.leaves_sorted},
        "err_energy_sq": res.errors.per_cell_energy,
    }
    for side, name in (("+", "root_plus"), ("-", "root_minus")):
        rm = aggregation.build_root_map(res.mesh, classes, side)
        ordering = {c: i for i, c in enumerate(res.mesh.leaves_sorted)}
        cell_data[name] = {c: ordering[r] for c, r in rm.root_of.items()}
    write_mesh_vtk(outdir / "mesh.vtk", res.mesh, cell_data)

    nodal = res.space.expand_solution(res.solution)
    for side, name in (("+", "plus"), ("-", "minus")):
        def field(pts, side=side):
            vals = np.zeros((len(pts), res.case.ncomp))
            sp = res.space
            tree = {}
            for cid in sp.cell_nodes[side]:
                x0, y0, h = res.mesh.cell_box(cid)
                tree[cid] = (x0, y0, h)
            for i, p in enumerate(pts):
                for cid, (x0, y0, h) in tree.items():
                    if x0 - 1e-12 <= p[0] <= x0 + h + 1e-12 and \
                       y0 - 1e-12 <= p[1] <= y0 + h + 1e-12:
                        ref = (p - np.array([x0, y0])) / h
                        nv = nodal[sp.cell_nodes[side][cid]
                                   + sp.side_offset[side]]
                        vals[i] = fespace.shape_values(sp.order,
                                                       ref[None, :])[0] @ nv
                        break
            return vals
        write_subtriangulation_vtk(outdir / f"solution_{name}.vtk", res.decomp,
                                   side, field, "u")
    if cfg.debug_dump_matrix:
        linalg.save_matrix_market(outdir / "system.mtx", res.system)
    if cfg.debug_dump_constraints:
        with open(outdir / "constraints.txt", "w") as f:
            for gid in sorted(res.space.constraints):
                con = res.space.constraints[gid]
                f.write(f"{gid} {con.kind} masters={con.masters} "
                        f"coefs={[f'{c:.12g}' for c in con.coefs]} "
                        f"offset={[f'{o:.12g}' for o in con.offset]}\n")
    return 0 if res.report.converged else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="agfem",
        description="Aggregated unfitted FE driver for interface problems")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("converge", "sweep", "cond", "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="key=value")
        p.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outdir = Path(args.out)
    try:
        handler = {"converge": cmd_converge, "sweep": cmd_sweep,
                   "cond": cmd_cond, "run": cmd_run}[args.command]
        return handler(cfg, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
