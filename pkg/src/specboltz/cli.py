"""Command line entry points.

    specboltz weights CONFIG      build and cache the weight table
    specboltz run CONFIG          integrate, writing CSVs and state dumps
    specboltz limits [options]    grazing-limit validation sweep
    specboltz moments STATE       print the moments of a state dump

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 weight
cache missing or mismatched, 4 quadrature failure, 5 non-finite state.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from specboltz import diagnostics as diag
from specboltz._quad import QuadratureError
from specboltz.config import ConfigError, RunConfig, load_config
from specboltz.conservation import build_projector
from specboltz.grid import build_grid
from specboltz.kernels import GrazingRutherford, KernelSpec, grazing_moment
from specboltz.solver import SolverError, StateFileError, load_state, run, save_state
from specboltz.weights import (
    LANDAU,
    CacheError,
    G_boltzmann,
    G_landau,
    build_weight_table,
    load_table,
    save_table,
)

log = logging.getLogger("specboltz")

EXIT_IO, EXIT_CONFIG, EXIT_CACHE, EXIT_QUAD, EXIT_SOLVER = 1, 2, 3, 4, 5


def _time_label(t: float) -> str:
    return f"{t:.10g}"


def _build_table(cfg: RunConfig):
    grid = cfg.grid()
    if cfg.operator == LANDAU:
        kernel = KernelSpec(cfg.lam)
        return build_weight_table(grid, kernel, operator=LANDAU, lam=cfg.lam)
    return build_weight_table(grid, cfg.kernel_spec())


def cmd_weights(args) -> int:
    cfg = load_config(args.config)
    path = cfg.cache_file()
    if path.exists() and not args.force:
        print(f"weight cache {path} exists (use --force to rebuild)")
        return 0
    t0 = time.perf_counter()
    table = _build_table(cfg)
    save_table(table, path)
    print(f"wrote {path}  N={table.N} checksum={table.checksum()} "
          f"quad_tol={table.quad_tol:.3e} missed={table.missed} "
          f"({time.perf_counter() - t0:.1f}s)")
    return 0


class CsvSink:
    """Appends one moments row per record and writes slices and dumps."""

    def __init__(self, out: Path, grid, append: bool, skip_first: bool):
        self.out = out
        self.grid = grid
        path = out / "moments.csv"
        fresh = not (append and path.exists())
        self.fh = open(path, "w" if fresh else "a", newline="")
        if fresh:
            self.fh.write(",".join(diag.MOMENT_COLUMNS) + "\n")
        self.skip = skip_first

    def __call__(self, rec):
        if self.skip:
            self.skip = False
            return
        row = rec.moments.as_row(rec.t)
        self.fh.write(",".join(diag.format_value(x) for x in row) + "\n")
        self.fh.flush()
        label = _time_label(rec.t)
        diag.write_csv(self.out / f"slice_t{label}.csv", ("v", "f"),
                       diag.slice_profile(rec.f, self.grid))
        save_state(self.out / f"state_t{label}.bfs", rec.f, self.grid, rec.t)

    def close(self):
        self.fh.close()


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    grid = cfg.grid()
    solver_cfg = cfg.solver_config()
    cache = cfg.cache_file()
    if not cache.exists():
        raise CacheError(f"no weight cache at {cache}; run 'specboltz weights {args.config}' first")
    table = load_table(cache, grid, **cfg.table_metadata())
    t_start = 0.0
    if args.restart:
        f0, sgrid, t_start = load_state(args.restart)
        if sgrid != grid:
            raise ConfigError(f"state grid (N={sgrid.N}, L={sgrid.L}) differs from config")
    else:
        f0 = diag.initial_condition(cfg.ic, grid)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(config=cfg.effective(), weight_checksum=table.checksum(),
                weight_quad_tol=table.quad_tol, restart=str(args.restart or ""),
                t_start=t_start)
    meta_path = out / "metadata.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    sink = CsvSink(out, grid, append=bool(args.restart), skip_first=bool(args.restart))
    result = run(f0, solver_cfg, table, build_projector(grid), grid, sinks=[sink],
                 t_start=t_start)
    meta.update(t_end=result.t, evaluations=result.stats.evaluations,
                max_imag_residue=result.stats.max_imag_residue,
                max_mass_defect_before_projection=result.stats.max_mass_defect)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    m = result.records[-1].moments
    print(f"t={result.t:.6g} rho={m.mass!r} T={m.temperature!r} H={m.entropy!r} "
          f"min_f={m.min_f!r}")
    return 0


def limits_tables(eps_list, lam=-3.0, samples=20, seed=0, max_norm=4.0, N=4, L=5.0):
    """Rows for the three grazing-limit tables (see ``cmd_limits``)."""
    rng = np.random.default_rng(seed)

    def draw():
        x = rng.normal(size=3)
        return x / np.linalg.norm(x) * rng.uniform(0.1, max_norm)

    pairs = [(draw(), draw()) for _ in range(samples)]
    landau_g = [G_landau(u, z, lam) for u, z in pairs]
    grid = build_grid(N, L)
    landau_w = build_weight_table(grid, KernelSpec(lam), operator=LANDAU, lam=lam,
                                  estimate_error=False).values
    lam_rows, gap_rows, frob_rows = [], [], []
    for eps in eps_list:
        kernel = KernelSpec(lam, GrazingRutherford(eps))
        lam_rows.append((eps, grazing_moment(kernel, 1), grazing_moment(kernel, 2)))
        gaps = np.array([abs(G_boltzmann(u, z, kernel) - gl) / abs(gl)
                         for (u, z), gl in zip(pairs, landau_g)])
        gap_rows.append((eps, gaps.max(), gaps.mean()))
        w = build_weight_table(grid, kernel, estimate_error=False).values
        frob_rows.append((eps, np.linalg.norm(w - landau_w) / np.linalg.norm(landau_w)))
    return lam_rows, gap_rows, frob_rows


def cmd_limits(args) -> int:
    eps_list = [float(x) for x in args.eps.split(",")]
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lam_rows, gap_rows, frob_rows = limits_tables(eps_list, args.lam, args.samples,
                                                  args.seed, args.max_norm, args.N, args.L)
    diag.write_csv(out / "grazing_moments.csv", ("eps", "Lambda", "moment_p2"), lam_rows)
    diag.write_csv(out / "g_landau_gap.csv", ("eps", "max_rel_gap", "mean_rel_gap"), gap_rows)
    diag.write_csv(out / "weight_landau_gap.csv", ("eps", "rel_frobenius"), frob_rows)
    for (eps, lam_eps, p2), (_, gmax, _), (_, frob) in zip(lam_rows, gap_rows, frob_rows):
        print(f"eps={eps:.0e}  Lambda={lam_eps:.9f}  p2={p2:.3e}  "
              f"G gap={gmax:.3e}  weight gap={frob:.3e}")
    return 0


def cmd_moments(args) -> int:
    f, grid, t = load_state(args.state)
    m = diag.moments(f, grid)
    V = [float(x) for x in m.velocity]
    print(f"t        {t!r}")
    print(f"rho      {m.mass!r}")
    print(f"V        {V[0]!r} {V[1]!r} {V[2]!r}")
    print(f"energy   {m.energy!r}")
    print(f"T        {m.temperature!r}" + ("  (degenerate: zero mass)" if m.degenerate else ""))
    print(f"H        {m.entropy!r}  (skipped fraction {m.skipped_fraction:.3e})")
    print(f"min_f    {m.min_f!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="specboltz",
                                description="Conservative spectral Boltzmann/Landau solver")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="build and cache the weight table")
    w.add_argument("config")
    w.add_argument("--force", action="store_true", help="rebuild an existing cache")
    w.set_defaults(func=cmd_weights)

    r = sub.add_parser("run", help="time integration from a config file")
    r.add_argument("config")
    r.add_argument("--restart", help="continue from a state dump")
    r.set_defaults(func=cmd_run)

    lim = sub.add_parser("limits", help="grazing-limit validation sweep")
    lim.add_argument("--eps", default="1e-1,1e-2,1e-3", help="comma-separated eps list")
    lim.add_argument("--lam", type=float, default=-3.0)
    lim.add_argument("--samples", type=int, default=20)
    lim.add_argument("--seed", type=int, default=0)
    lim.add_argument("--max-norm", type=float, default=4.0)
    lim.add_argument("--N", type=int, default=4)
    lim.add_argument("--L", type=float, default=5.0)
    lim.add_argument("--output-dir", default="limits")
    lim.set_defaults(func=cmd_limits)

    m = sub.add_parser("moments", help="report the moments of a state dump")
    m.add_argument("state")
    m.set_defaults(func=cmd_moments)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        msg, code = f"config error: {exc}", EXIT_CONFIG
    except CacheError as exc:
        msg, code = f"weight cache error: {exc}", EXIT_CACHE
    except StateFileError as exc:
        msg, code = f"state file error: {exc}", EXIT_IO
    except QuadratureError as exc:
        msg, code = f"quadrature failure: {exc}", EXIT_QUAD
    except SolverError as exc:
        msg, code = f"solver failure: {exc}", EXIT_SOLVER
    except OSError as exc:
        msg, code = f"I/O error: {exc}", EXIT_IO
    print(f"specboltz: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
