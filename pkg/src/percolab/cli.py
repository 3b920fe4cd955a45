"""Command-line front end.

Subcommands: generate, partition, solve, greens, scaling, decay, stats,
validate.  A run writes record.json and curves.csv into the output
directory; validate exits nonzero when any hard check fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .env import EdgeRef, Environment, generate
from .experiments import (
    RunConfig,
    run_corrector_scaling,
    run_partition_stats,
    run_sensitivity,
    run_spatial_average_decay,
    run_validation_suite,
)
from .geometry import TriadicCube, maximal_cluster
from .partition import build_partition
from .solver import corrector, greens_gradient


def _add_common(p):
    p.add_argument("--config", help="INI config file (key = value, any sections)")
    p.add_argument("--seed", type=int, help="base seed override")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--d", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--radii", type=str, help="comma separated radius ladder")


def _config_from(args, experiment) -> RunConfig:
    overrides = {"experiment": experiment, "out_dir": args.out,
                 "workers": args.workers, "strict": args.strict}
    for key in ("d", "M", "p", "lam", "n_samples"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if getattr(args, "radii", None):
        overrides["radii"] = tuple(float(x) for x in args.radii.split(","))
    if getattr(args, "extended", False):
        overrides["extended"] = True
    if args.config:
        return RunConfig.from_ini(args.config, **overrides)
    return RunConfig(**overrides)


def cmd_generate(args):
    cfg = _config_from(args, "generate")
    env = generate(cfg.env_spec(cfg.base_seed))
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"env_d{cfg.d}_M{cfg.M}_s{cfg.base_seed}.bin")
    env.dump(path)
    print(f"wrote {path}")
    return 0


def cmd_partition(args):
    cfg = _config_from(args, "partition")
    env = generate(cfg.env_spec(cfg.base_seed))
    P = build_partition(env)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cells_path = os.path.join(cfg.out_dir, "cells.csv")
    with open(cells_path, "w") as fh:
        coords = ",".join(f"z{k}" for k in range(cfg.d))
        reps = ",".join(f"rep{k}" for k in range(cfg.d))
        fh.write(f"scale,{coords},{reps}\n")
        for row in P.to_csv_rows():
            fh.write(",".join(map(str, row)) + "\n")
    lookup_path = os.path.join(cfg.out_dir, "cell_lookup.npy")
    np.save(lookup_path, P.cell_index)
    print(f"wrote {cells_path} and {lookup_path} ({P.n_cells} cells)")
    return 0


def cmd_solve(args):
    cfg = _config_from(args, "solve")
    env = generate(cfg.env_spec(cfg.base_seed))
    box = TriadicCube(cfg.M, (0,) * cfg.d)
    chi, g, report = corrector(env, box, cfg.direction, tol=cfg.tol)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "corrector.csv")
    with open(path, "w") as fh:
        fh.write(",".join(f"x{k}" for k in range(cfg.d)) + ",chi\n")
        for v, c in zip(g.vertices, chi):
            fh.write(",".join(map(str, v)) + f",{c!r}\n")
    with open(os.path.join(cfg.out_dir, "solve_report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    print(f"wrote {path} ({g.n_vertices} vertices, {report.iterations} iterations)")
    return 0


def cmd_greens(args):
    cfg = _config_from(args, "greens")
    env = generate(cfg.env_spec(cfg.base_seed))
    box = TriadicCube(cfg.M, (0,) * cfg.d)
    g = maximal_cluster(env, box)
    x = tuple(int(v) for v in args.edge.split(",")[:cfg.d])
    y = tuple(int(v) for v in args.edge.split(",")[cfg.d:])
    field = greens_gradient(g, EdgeRef.of(x, y))
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "greens_gradient.csv")
    with open(path, "w") as fh:
        head = ",".join([f"a{k}" for k in range(cfg.d)] + [f"b{k}" for k in range(cfg.d)])
        fh.write(head + ",grad_G\n")
        for (i, j), val in zip(g.edges, field):
            fh.write(",".join(map(str, list(g.vertices[i]) + list(g.vertices[j])))
                     + f",{val!r}\n")
    print(f"wrote {path}")
    return 0


def _run_and_save(record, cfg):
    record.save(cfg.out_dir)
    print(f"wrote {cfg.out_dir}/record.json ({len(record.samples)} samples, "
          f"{len(record.failures)} failures, {record.wall_clock:.1f}s)")
    for k, v in record.fits.items():
        print(f"  {k}: {v}")
    return 0 if record.passed else 1


def cmd_scaling(args):
    cfg = _config_from(args, "scaling")
    return _run_and_save(run_corrector_scaling(cfg), cfg)


def cmd_decay(args):
    cfg = _config_from(args, "decay")
    rc = _run_and_save(run_spatial_average_decay(cfg), cfg)
    if cfg.extended:
        sens_cfg = RunConfig(**{**cfg.__dict__, "experiment": "sensitivity",
                                "out_dir": os.path.join(cfg.out_dir, "sensitivity")})
        rc |= _run_and_save(run_sensitivity(sens_cfg), sens_cfg)
    return rc


def cmd_stats(args):
    cfg = _config_from(args, "stats")
    return _run_and_save(run_partition_stats(cfg), cfg)


def cmd_validate(args):
    cfg = _config_from(args, "validate")
    record = run_validation_suite(cfg)
    record.save(cfg.out_dir)
    for name, res in record.fits.items():
        status = "PASS" if res.get("passed", False) else "FAIL"
        detail = {k: v for k, v in res.items() if k != "passed"}
        print(f"[{status}] {name}: {detail}")
    print("validation", "PASSED" if record.passed else "FAILED")
    return 0 if record.passed else 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="percolab",
                                 description="percolation cluster homogenization laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    specs = {
        "generate": cmd_generate,
        "partition": cmd_partition,
        "solve": cmd_solve,
        "greens": cmd_greens,
        "scaling": cmd_scaling,
        "decay": cmd_decay,
        "stats": cmd_stats,
        "validate": cmd_validate,
    }
    for name, fn in specs.items():
        p = sub.add_parser(name)
        _add_common(p)
        if name == "greens":
            p.add_argument("--edge", required=True,
                           help="edge endpoints, e.g. 0,0,1,0 for (0,0)-(1,0)")
        if name == "decay":
            p.add_argument("--extended", action="store_true",
                           help="also run the resampling-sensitivity ladder")
        p.set_defaults(fn=fn)
    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
