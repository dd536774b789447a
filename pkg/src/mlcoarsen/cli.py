"""Command-line front end.

Usage::

    mlcoarsen SUBCOMMAND [CONFIG.ini] [--set section.key=value ...]
              [--graph PATH | --grid NXxNY[xNZ] | --matrix PATH]
              [--seed N] [--out DIR] [--threads N]

Subcommands are ``hierarchy``, ``upscale``, ``mlmc``, ``fas`` and ``verify``.
Every run writes its result files, ``manifest.json`` (config echo, versions,
seed, list of outputs) and ``timings.json`` into the output directory.
Result files depend only on the config and the seed; wall-clock times live
in ``timings.json`` alone.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import platform
import sys
import time
import zlib

import numpy as np
import scipy

from . import __version__
from .checks import InvariantError, corrupt_column, step_report, verify_hierarchy, violations
from .coarsen import CoarsenSpec, build_hierarchy, rap
from .graph import TpfaGrid, assemble_tpfa, build_incidence, read_edge_list
from .numerics import SaddleSolveError, read_mm, write_mm

log = logging.getLogger("mlcoarsen")

SUBCOMMANDS = ("hierarchy", "upscale", "mlmc", "fas", "verify")

DEFAULTS = {
    "run": {"seed": "0", "out": "mlcoarsen_out", "threads": "1"},
    "input": {
        "graph": "",
        "matrix": "",
        "grid": "",
        "cell_size": "",
        "boundary": "ymax:-1,ymin:0",
        "perm": "lognormal",
        "sigma2": "1.0",
        "corr": "10.0",
        "anisotropy": "",
    },
    "coarsen": {
        "max_levels": "3",
        "coarsening_factor": "8",
        "m_A": "1",
        "face_dofs": "",
        "pv_method": "local_solve",
        "spectral_tol": "",
        "svd_tol": "1e-9",
        "partition_seed": "0",
    },
    "upscale": {"m_A": "", "source": "auto"},
    "mlmc": {
        "mse_target": "1e-3",
        "pilot": "15",
        "side": "ymax",
        "sigma2": "1.0",
        "corr": "10.0",
        "anisotropy": "",
        "cost_model": "nnz",
        "max_rounds": "20",
        "trace": "yes",
    },
    "fas": {
        "alpha": "5.0",
        "source": "1.0",
        "variant": "galerkin",
        "relax_steps": "10",
        "inner_steps": "4",
        "rel_tol": "1e-8",
        "abs_tol": "1e-10",
        "max_cycles": "50",
        "picard": "yes",
        "boundary": "xmin:0,xmax:0,ymin:0,ymax:0",
    },
    "verify": {"samples": "50", "corrupt_column": ""},
}


class ConfigError(ValueError):
    pass


def substream_seed(seed: int, name: str) -> int:
    """Named 63-bit sub-seed of the run seed (stable across platforms)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------- config


def load_config(path=None, overrides=()) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str
    cfg.read_dict(DEFAULTS)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not (sep and dot and section and option):
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, option, value.strip())
    for section in cfg.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for option in cfg[section]:
            if option not in DEFAULTS[section]:
                raise ConfigError(f"unknown option {section}.{option}")
    return cfg


def _opt_int(s: str):
    return None if s.strip() in ("", "none", "None") else int(s)


def _opt_float(s: str):
    return None if s.strip() in ("", "none", "None") else float(s)


def _floats(s: str):
    return [float(x) for x in s.replace(",", " ").split()] if s.strip() else None


def _ints(s: str):
    return [int(x) for x in s.replace(",", " ").split()] if s.strip() else []


def _yes(s: str) -> bool:
    return s.strip().lower() in ("1", "yes", "true", "on")


def coarsen_spec(cfg, m_A=None) -> CoarsenSpec:
    c = cfg["coarsen"]
    try:
        return CoarsenSpec(
            max_levels=int(c["max_levels"]),
            coarsening_factor=int(c["coarsening_factor"]),
            m_A=int(c["m_A"]) if m_A is None else int(m_A),
            face_dofs=_opt_int(c["face_dofs"]),
            pv_method=c["pv_method"],
            spectral_tol=_opt_float(c["spectral_tol"]),
            svd_tol=float(c["svd_tol"]),
            seed=int(c["partition_seed"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[coarsen]: {exc}") from exc


def _parse_grid(s: str):
    try:
        dims = tuple(int(d) for d in s.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"grid must look like 32x32 or 8x8x8, got {s!r}") from exc
    return dims


def _parse_boundary(s: str) -> dict:
    out = {}
    for item in s.replace(";", ",").split(","):
        if not item.strip():
            continue
        side, _, val = item.partition(":")
        val = val.strip()
        out[side.strip()] = "no_flux" if val == "no_flux" else float(val)
    return out


def make_grid(cfg, seed: int) -> TpfaGrid:
    inp = cfg["input"]
    dims = _parse_grid(inp["grid"])
    h = _floats(inp["cell_size"])
    grid = TpfaGrid(dims, h=h, boundary=_parse_boundary(inp["boundary"]))
    perm = inp["perm"].strip()
    if perm == "lognormal":
        from .mlmc import FieldSampler, FieldSpec

        fs = FieldSpec(sigma2=float(inp["sigma2"]), corr=float(inp["corr"]), anisotropy=_floats(inp["anisotropy"]))
        rng = np.random.default_rng(substream_seed(seed, "field"))
        grid.perm = FieldSampler(grid.centers(), fs).sample(rng)
    elif perm in ("uniform", ""):
        pass
    elif os.path.isfile(perm):
        grid.perm = np.loadtxt(perm, dtype=float).reshape(-1)
    else:
        raise ConfigError(f"input.perm must be lognormal, uniform or an existing file, got {perm!r}")
    return grid


def load_input(cfg, seed: int):
    """``(fine system, grid or None)`` from exactly one input source."""
    inp = cfg["input"]
    given = [k for k in ("graph", "matrix", "grid") if inp[k].strip()]
    if len(given) != 1:
        raise ConfigError(f"exactly one of input.graph, input.matrix, input.grid is required (got {given or 'none'})")
    kind = given[0]
    if kind == "grid":
        grid = make_grid(cfg, seed)
        _, fine = assemble_tpfa(grid)
        return fine, grid
    path = inp[kind].strip()
    if not os.path.isfile(path):
        raise ConfigError(f"input.{kind} file not found: {path}")
    if kind == "graph":
        return build_incidence(read_edge_list(path)), None
    from .estimators import _as_system

    return _as_system(read_mm(path)), None


# ---------------------------------------------------------------- drivers


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_hierarchy(cfg, seed, out, timings) -> list:
    fine, _ = load_input(cfg, seed)
    t0 = time.perf_counter()
    h = build_hierarchy(fine, coarsen_spec(cfg))
    timings["build"] = time.perf_counter() - t0
    files = []
    for ell, lev in enumerate(h.levels):
        for name, A in (("M", lev.M), ("D", lev.D)):
            fn = f"level{ell}_{name}.mtx"
            write_mm(os.path.join(out, fn), A)
            files.append(fn)
    for ell, ops in enumerate(h.transfers):
        for name in ("P_u", "P_sigma", "Q_u", "Q_sigma"):
            fn = f"step{ell}_{name}.mtx"
            write_mm(os.path.join(out, fn), getattr(ops, name))
            files.append(fn)
        fn = f"partition{ell}.txt"
        from .partition import write_partition

        write_partition(os.path.join(out, fn), h.partitions[ell])
        files.append(fn)
    summary = {
        "n_levels": h.n_levels,
        "dof_counts": [{"vertex": int(v), "edge": int(e)} for v, e in h.dof_counts()],
        "vertex_dofs": [int(v) for v, _ in h.dof_counts()],
        "edge_dofs": [int(e) for _, e in h.dof_counts()],
        "n_aggregates": [int(p.n_aggregates) for p in h.partitions],
        "operator_complexity": h.operator_complexity(),
        "nnz": [lev.nnz() for lev in h.levels],
    }
    _write_json(os.path.join(out, "hierarchy.json"), summary)
    return ["hierarchy.json"] + files, summary


def _upscale_source(cfg, fine, grid):
    kind = cfg["upscale"]["source"].strip()
    if kind == "auto":
        kind = "zero" if fine.boundary else "fiedler"
    if kind == "zero":
        return np.zeros(fine.graph.n_vertices)
    if kind == "fiedler":
        from .upscale import fiedler_rhs

        f, _ = fiedler_rhs(fine.graph)
        return f
    if kind == "ones":
        f = np.ones(fine.graph.n_vertices)
        return f - f.mean() if not fine.boundary else f
    raise ConfigError(f"upscale.source must be auto, zero, fiedler or ones, got {kind!r}")


def run_upscale(cfg, seed, out, timings):
    from .upscale import sweep_mA, write_csv

    fine, grid = load_input(cfg, seed)
    f = _upscale_source(cfg, fine, grid)
    m_list = _ints(cfg["upscale"]["m_A"]) or [int(cfg["coarsen"]["m_A"])]
    t0 = time.perf_counter()
    rows = sweep_mA(fine, coarsen_spec(cfg), f, m_list)
    timings["sweep"] = time.perf_counter() - t0
    timings["solves"] = [{"level": r.level, "m_A": r.m_A, "seconds": r.seconds} for r in rows]
    write_csv(os.path.join(out, "upscale.csv"), rows, with_time=False)
    return ["upscale.csv"], {"rows": len(rows)}


def run_mlmc(cfg, seed, out, timings):
    from . import mlmc

    if not cfg["input"]["grid"].strip():
        raise ConfigError("mlmc needs a grid input (input.grid)")
    m = cfg["mlmc"]
    grid = make_grid(cfg, seed)
    grid.perm = np.ones(grid.n_cells)
    _, fine = assemble_tpfa(grid)
    t0 = time.perf_counter()
    h = build_hierarchy(fine, coarsen_spec(cfg))
    timings["build"] = time.perf_counter() - t0
    prob = mlmc.FluxProblem(h, grid, side=m["side"])
    fs = mlmc.FieldSpec(
        sigma2=float(m["sigma2"]),
        corr=float(m["corr"]),
        anisotropy=_floats(m["anisotropy"]),
        seed=substream_seed(seed, "sampler"),
    )
    t0 = time.perf_counter()
    state = mlmc.mlmc_run(prob, fs, float(m["mse_target"]), pilot=int(m["pilot"]), cost_model=m["cost_model"],
                          max_rounds=int(m["max_rounds"]))
    timings["sampling"] = time.perf_counter() - t0
    extra = {"dof_counts": [list(map(int, d)) for d in h.dof_counts()], "n_levels": h.n_levels}
    rep = mlmc.report(state, extra)
    if m["cost_model"] == "time":
        # measured costs are wall-clock and would break byte-identical output
        timings["level_costs"] = [lv.pop("cost") for lv in rep["levels"]]
    mlmc.write_json(os.path.join(out, "mlmc.json"), rep)
    files = ["mlmc.json"]
    if _yes(m["trace"]):
        mlmc.write_trace(os.path.join(out, "mlmc_trace.csv"), state.sampler)
        files.append("mlmc_trace.csv")
    return files, {"estimate": rep["estimate"], "sample_counts": rep["sample_counts"]}


def run_fas(cfg, seed, out, timings):
    from . import fas as F

    if not cfg["input"]["grid"].strip():
        raise ConfigError("fas needs a grid input (input.grid)")
    fc = cfg["fas"]
    grid = make_grid(cfg, seed)
    grid = dataclasses.replace(grid, boundary=_parse_boundary(fc["boundary"]))
    _, fine = assemble_tpfa(grid)
    t0 = time.perf_counter()
    h = build_hierarchy(fine, coarsen_spec(cfg))
    timings["build"] = time.perf_counter() - t0
    f = np.full(grid.n_cells, float(fc["source"]) * np.prod(grid.h))
    prob = F.NonlinearProblem(h, grid, float(fc["alpha"]), f, fc["variant"])
    conf = F.FasConfig(
        relax_steps=int(fc["relax_steps"]),
        inner_steps=int(fc["inner_steps"]),
        rel_tol=float(fc["rel_tol"]),
        abs_tol=float(fc["abs_tol"]),
        max_cycles=int(fc["max_cycles"]),
    )
    t0 = time.perf_counter()
    res = F.fas_solve(prob, conf)
    timings["fas"] = time.perf_counter() - t0
    it = hist = picard_error = None
    if _yes(fc["picard"]):
        t0 = time.perf_counter()
        try:
            xp, it, hist = F.picard_solve(prob, rel_tol=conf.rel_tol, abs_tol=conf.abs_tol)
        except (F.ConvergenceError, SaddleSolveError, FloatingPointError) as exc:
            # the reference iteration may diverge where FAS does not
            log.warning("Picard reference failed: %s", exc)
            picard_error = str(exc)
        timings["picard"] = time.perf_counter() - t0
    rep = F.report(prob, res, it, hist)
    if picard_error:
        rep["picard_error"] = picard_error
    if it is not None:
        n_s = prob.n_s[0]
        rep["rel_diff_fas_picard"] = float(np.linalg.norm(res.x[n_s:] - xp[n_s:]) / np.linalg.norm(xp[n_s:]))
    F.write_json(os.path.join(out, "fas.json"), rep)
    return ["fas.json"], {"fas_cycles": res.cycles, "picard_iterations": it}


def run_verify(cfg, seed, out, timings):
    fine, _ = load_input(cfg, seed)
    spec = coarsen_spec(cfg)
    t0 = time.perf_counter()
    h = build_hierarchy(fine, CoarsenSpec(**{**spec.__dict__, "check": False}))
    timings["build"] = time.perf_counter() - t0
    reports = verify_hierarchy(h, int(cfg["verify"]["samples"]), substream_seed(seed, "verify"))
    col = _opt_int(cfg["verify"]["corrupt_column"])
    if col is not None and h.transfers:
        # negative control: rescale one P_sigma column and rebuild the coarse level
        bad_ops = corrupt_column(h.transfers[0], col)
        coarse = rap(h.levels[0], bad_ops)
        rep = step_report(h.levels[0], coarse, bad_ops, h.partitions[0])
        rep["level"] = 0
        rep["corrupted_column"] = col
        reports[0] = rep
    failed = []
    for rep in reports:
        rep["violations"] = violations(rep)
        failed += [f"step {rep['level']}: {k}={rep[k]:.3e}" for k in rep["violations"]]
    summary = {
        "n_levels": h.n_levels,
        "steps": reports,
        "max": {k: max(r[k] for r in reports) for k in reports[0] if k not in ("level", "violations", "pv_min", "corrupted_column")}
        if reports else {},
        "min_pv": min(r["pv_min"] for r in reports) if reports else None,
        "ok": not failed,
        "vacuous": not reports,
    }
    _write_json(os.path.join(out, "verify.json"), summary)
    for rep in reports:
        print(" ".join([f"step {rep['level']}:"] + [f"{k}={rep[k]:.2e}" for k in rep if k not in ("level", "violations", "corrupted_column")]))
    if not reports:
        print("single-level hierarchy: nothing to verify")
    if failed:
        raise InvariantError("; ".join(failed))
    return ["verify.json"], {"ok": True, "steps": len(reports)}


DRIVERS = {
    "hierarchy": run_hierarchy,
    "upscale": run_upscale,
    "mlmc": run_mlmc,
    "fas": run_fas,
    "verify": run_verify,
}


# ---------------------------------------------------------------- entry point


def versions() -> dict:
    import sklearn

    return {
        "mlcoarsen": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlcoarsen", description="Multilevel spectral coarsening of graph Laplacians in mixed form.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("config", nargs="?", help="INI config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config entry (repeatable)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--graph", help="edge-list graph file")
    src.add_argument("--matrix", help="Matrix Market weighted adjacency")
    src.add_argument("--grid", help="structured TPFA grid, e.g. 32x32")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="cap on BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    for key in ("graph", "matrix", "grid"):
        if getattr(args, key):
            overrides += [f"input.{k}=" for k in ("graph", "matrix", "grid") if k != key]
            overrides.append(f"input.{key}={getattr(args, key)}")
    for key in ("seed", "out", "threads"):
        if getattr(args, key) is not None:
            overrides.append(f"run.{key}={getattr(args, key)}")
    try:
        cfg = load_config(args.config, overrides)
        seed = int(cfg["run"]["seed"])
        out = cfg["run"]["out"]
        threads = _opt_int(cfg["run"]["threads"])
    except (ConfigError, ValueError, configparser.Error) as exc:
        print(f"mlcoarsen: config error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(out, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                files, summary = DRIVERS[args.subcommand](cfg, seed, out, timings)
        else:
            files, summary = DRIVERS[args.subcommand](cfg, seed, out, timings)
    except InvariantError as exc:
        print(f"mlcoarsen: invariant violation: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"mlcoarsen: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"mlcoarsen: {args.subcommand} failed: {exc}", file=sys.stderr)
        return 1
    timings["total"] = time.perf_counter() - t0
    manifest = {
        "subcommand": args.subcommand,
        "seed": seed,
        # the output directory is left out so that reruns elsewhere match byte for byte
        "config": {s: {k: v for k, v in cfg[s].items() if (s, k) != ("run", "out")} for s in cfg.sections()},
        "versions": versions(),
        "outputs": files,
        "summary": summary,
        "timings_file": "timings.json",
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    _write_json(os.path.join(out, "timings.json"), timings)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
