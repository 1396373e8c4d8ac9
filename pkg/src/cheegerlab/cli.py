"""Command line interface: ``python -m cheegerlab <command> ...``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import kostlan, lab
from .cheeger import estimate_cheeger, systole
from .projective import branch_report, make_fiber_system, random_pencil
from .spectral import export_field, spectrum
from .surface_mesh import (
    curvature,
    euler_genus,
    export_lengths,
    export_off,
    import_mesh,
    lift_mesh,
    prepare_base,
    total_area,
)


def _read_mesh(prefix: str):
    p = Path(prefix)
    return import_mesh(p.with_suffix(".off").read_text(), p.with_suffix(".lengths").read_text())


def cmd_sample(args) -> int:
    P = kostlan.sample_kostlan(args.degree, kostlan.EnsembleSeed(args.seed, args.stream))
    text = kostlan.dumps(P)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_mesh(args) -> int:
    P = kostlan.load(args.polynomial)
    pencil, pts = random_pencil(P, np.random.default_rng(args.seed))
    mesh = lift_mesh(P, pencil, prepare_base(args.level, pts, make_fiber_system(P, pencil)), pts)
    out = Path(args.output)
    out.with_suffix(".off").write_text(export_off(mesh))
    out.with_suffix(".lengths").write_text(export_lengths(mesh))
    out.with_suffix(".branch").write_text(branch_report(pts))
    chi, genus = euler_genus(mesh)
    report = {
        "degree": P.degree,
        "vertices": mesh.n_vertices,
        "edges": mesh.n_edges,
        "faces": mesh.n_faces,
        "genus": genus,
        "branch_points": len(pts),
        "area": total_area(mesh),
        "min_angle": mesh.min_angle(),
    }
    print(lab.dumps_json(report))
    return 0


def cmd_spectrum(args) -> int:
    mesh = _read_mesh(args.mesh)
    res = spectrum(mesh, k=args.k, seed=args.seed)
    report = res.report()
    report["lambda1_unit_area"] = lab.UnitArea.to_unit_area(float(res.eigenvalues[1]), "lambda")
    print(lab.dumps_json(report))
    if args.fields:
        for i in range(res.eigenfunctions.shape[1]):
            Path(f"{args.fields}.{i}.field").write_text(export_field(res.eigenfunctions[:, i]))
    return 0


def cmd_cheeger(args) -> int:
    mesh = _read_mesh(args.mesh)
    res = spectrum(mesh, k=args.k, seed=args.seed)
    K = curvature(mesh)
    est = estimate_cheeger(mesh, res, K.inf, args.levels)
    report = {
        "h_upper": est.h_upper,
        "h_lower": est.h_lower,
        "lambda1": est.lambda1,
        "curvature_floor": est.curvature_floor,
        "curvature_sup": K.sup,
        "cut_length": est.cut.length,
        "cut_areas": list(est.cut.side_areas),
        "eigen_index": est.eigen_index,
        "convention": est.convention,
    }
    if args.systole:
        sy = systole(mesh)
        report["systole"] = sy.length
        report["systole_kind"] = sy.kind
    print(lab.dumps_json(report))
    if args.cut:
        Path(args.cut).write_text(est.cut.export())
    return 0


def cmd_experiment(args) -> int:
    cfg = lab.ExperimentConfig.load(args.config)
    records = lab.run_experiment(cfg)
    summary = lab.write_outputs(cfg, records)
    for d, row in summary["degrees"].items():
        print(f"d={d} accepted={row['accepted']} rejected={row['rejected']}")
    print(f"wrote {cfg.csv_path} and {cfg.json_path}")
    return 0


def cmd_bounds(args) -> int:
    a = args.a if args.a is not None else lab.a_rule("inv_log", args.degree)
    print(lab.dumps_json(asdict(lab.bound_calculator(args.degree, a, args.C, args.n))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cheegerlab", description="Spectra and Cheeger constants of random plane curves.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw a Kostlan polynomial")
    s.add_argument("--degree", "-d", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream", type=int, default=0)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("mesh", help="triangulate the curve of a polynomial file")
    s.add_argument("polynomial")
    s.add_argument("--level", type=int, default=2)
    s.add_argument("--seed", type=int, default=0, help="pencil seed")
    s.add_argument("--output", "-o", required=True, help="output prefix (.off, .lengths, .branch)")
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("spectrum", help="lowest Laplace eigenpairs of a mesh")
    s.add_argument("mesh", help="mesh prefix")
    s.add_argument("-k", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fields", help="write eigenfunctions as PREFIX.i.field")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("cheeger", help="Cheeger bracket (and systole) of a mesh")
    s.add_argument("mesh", help="mesh prefix")
    s.add_argument("-k", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--levels", type=int, default=256)
    s.add_argument("--systole", action="store_true")
    s.add_argument("--cut", help="write the realizing cut polyline here")
    s.set_defaults(func=cmd_cheeger)

    s = sub.add_parser("experiment", help="run a configured Monte Carlo experiment")
    s.add_argument("config")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("bounds", help="bound quantities for one degree")
    s.add_argument("--degree", "-d", type=int, required=True)
    s.add_argument("--a", type=float, default=None, help="a_d (default 1/log(d+1))")
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--n", type=int, default=2)
    s.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (kostlan.DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
