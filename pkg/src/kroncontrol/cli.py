"""Command-line experiment harness.

Runs the control-equation solver over a ladder of nested grids (unigrid or
cascadic), optionally for several preconditioner styles side by side, and
writes the per-level tables, residual histories, rank-propagation traces,
intergrid convergence ratios and solution factor dumps as CSV/JSON files.
Exit code 0 means every level converged, 2 means at least one level failed.
"""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

PRECOND_CHOICES = ("S1", "S2", "B1", "B2")
_THREAD_ENV = "KRONCONTROL_NUM_THREADS"


def _apply_thread_env():
    count = os.environ.get(_THREAD_ENV)
    if count:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, count)


_apply_thread_env()

from . import __version__  # noqa: E402
from .cascadic import GridLadder, cascadic_solve, prolongate_lowrank  # noqa: E402
from .kronop import GridSpec, assemble_stiffness  # noqa: E402
from .lowrank import LowRankMatrix, to_dense  # noqa: E402
from .oracle import dense_assemble, dense_solve_control, intergrid_ratio  # noqa: E402
from .pcg import SolveConfig, solve_control_modified, solve_control_primal  # noqa: E402
from .problems import gaussian_rhs, load_coefficient, preset_coefficient  # noqa: E402


@dataclass
class ExperimentConfig:
    """One experiment: a preset, a ladder, and solver/preconditioner settings."""

    preset: str = "test2"
    coefficient_file: str | None = None
    formulation: str = "modified"
    preconditioners: tuple = ("S2",)
    gamma: float = 1.0
    l_min: int = 5
    l_max: int = 8
    cascadic: bool = False
    eps_pcg: float = 1e-7
    eps_trunc: float = 1e-8
    rank_precond: int | None = None
    rhs_center: tuple = (0.5, 0.5)
    rhs_width: float = 0.15
    guess_rank_cap: int | None = None
    out_dir: str = "out"
    seed: int = 0
    dense_oracle: bool = False
    k_max: int = 200

    def solve_config(self):
        return SolveConfig(
            eps_pcg=self.eps_pcg,
            eps_trunc=self.eps_trunc,
            k_max=self.k_max,
            gamma=self.gamma,
        )

    def coefficient(self):
        if self.preset == "custom":
            if not self.coefficient_file:
                raise ValueError("custom preset needs a coefficient file")
            return load_coefficient(self.coefficient_file)
        return preset_coefficient(self.preset)

    def validate(self):
        if self.formulation not in ("modified", "primal"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        for p in self.preconditioners:
            if p not in PRECOND_CHOICES:
                raise ValueError(f"unknown preconditioner {p!r}")
            expected = "modified" if p.startswith("S") else "primal"
            if expected != self.formulation:
                raise ValueError(
                    f"preconditioner {p} belongs to the {expected} formulation"
                )
        if not (2 <= self.l_min <= self.l_max):
            raise ValueError("need 2 <= l_min <= l_max")


def _generator_style(precond):
    return "laplacian" if precond.endswith("1") else "averaged"


@dataclass
class _Run:
    """Per-preconditioner ladder results."""

    precond: str
    levels: list = field(default_factory=list)  # dicts per level
    solutions: list = field(default_factory=list)
    accumulated_time: float = 0.0
    failed: bool = False


def _run_ladder(cfg: ExperimentConfig, precond: str, coeff) -> _Run:
    solve_cfg = cfg.solve_config()
    style = _generator_style(precond)
    rhs_fn = lambda grid: gaussian_rhs(grid, cfg.rhs_center, cfg.rhs_width)
    run = _Run(precond)
    ladder = GridLadder.from_range(cfg.l_min, cfg.l_max)
    if cfg.cascadic:
        result = cascadic_solve(
            coeff, ladder, solve_cfg, rhs_fn,
            formulation=cfg.formulation, generator=style,
            precond_rank=cfg.rank_precond, guess_rank_cap=cfg.guess_rank_cap,
        )
        run.accumulated_time = result.accumulated_time
        for lv in result.levels:
            run.levels.append(_level_row(lv.level, lv.grid, lv.stats,
                                         guess_rank=lv.initial_guess_rank))
            run.solutions.append(lv.solution)
            run.failed |= not lv.stats.converged
        return run
    solver = (solve_control_modified if cfg.formulation == "modified"
              else solve_control_primal)
    for level, grid in zip(ladder.levels, ladder.grids):
        a_op = assemble_stiffness(coeff, grid, fd_normalize=True)
        u, stats = solver(
            a_op, coeff, grid, rhs_fn(grid), solve_cfg,
            generator=style, precond_rank=cfg.rank_precond,
        )
        run.accumulated_time += stats.total_time
        run.levels.append(_level_row(level, grid, stats, guess_rank=0))
        run.solutions.append(u)
        run.failed |= not stats.converged
    return run


def _level_row(level, grid, stats, guess_rank=0):
    iters = max(stats.iterations, 1)
    return {
        "level": level,
        "grid_size": f"{grid.ns[0]}^2",
        "n": grid.ns[0],
        "iterations": stats.iterations,
        "time_pcg": stats.total_time,
        "time_per_iter": stats.total_time / iters,
        "sol_rank": stats.solution_rank,
        "converged": stats.converged,
        "initial_guess_rank": guess_rank,
        "residuals": stats.residuals,
        "rank_trace": stats.rank_trace,
        "inner_iterations": stats.inner_iterations,
        "messages": stats.messages,
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.16e}"
    return x


def _emit_iterations_table(out_dir, runs):
    names = [r.precond for r in runs]
    header = ["grid_size"]
    for name in names:
        header += [f"iterations_{name}", f"time_pcg_{name}",
                   f"time_per_iter_{name}", f"sol_rank_{name}"]
    rows = []
    for i in range(len(runs[0].levels)):
        row = [runs[0].levels[i]["grid_size"]]
        for r in runs:
            lv = r.levels[i]
            row += [lv["iterations"], _fmt(lv["time_pcg"]),
                    _fmt(lv["time_per_iter"]), lv["sol_rank"]]
        rows.append(row)
    if any(r.accumulated_time for r in runs):
        row = ["accumulated"]
        for r in runs:
            row += ["", _fmt(r.accumulated_time), "", ""]
        rows.append(row)
    _write_csv(os.path.join(out_dir, "iterations.csv"), header, rows)


def _emit_residuals(out_dir, runs):
    rows = []
    for r in runs:
        for lv in r.levels:
            for k, res in enumerate(lv["residuals"], start=1):
                rows.append([r.precond, lv["grid_size"], k, _fmt(res)])
    _write_csv(os.path.join(out_dir, "residuals.csv"),
               ["precond", "grid_size", "iteration", "relative_residual"], rows)


def _emit_rank_trace(out_dir, runs):
    rows = []
    for r in runs:
        for lv in r.levels:
            for it, site, rank in lv["rank_trace"]:
                rows.append([r.precond, lv["grid_size"], it, site, rank])
    _write_csv(os.path.join(out_dir, "rank_propagation.csv"),
               ["precond", "grid_size", "iteration", "site", "rank"], rows)


def _emit_intergrid(out_dir, runs):
    rows = []
    for r in runs:
        crossings = []
        for i in range(1, len(r.solutions) - 1):
            c_h = intergrid_ratio(r.solutions[i - 1], r.solutions[i],
                                  r.solutions[i + 1])
            crossings.append((r.levels[i]["grid_size"], c_h))
        for grid_size, c_h in crossings:
            rows.append([r.precond, grid_size, _fmt(c_h),
                         _fmt(float(np.log2(c_h)))])
    if rows:
        _write_csv(os.path.join(out_dir, "intergrid_ratio.csv"),
                   ["precond", "grid_size", "c_h", "alpha_estimate"], rows)


def _emit_direct_compare(cfg, out_dir, runs, coeff):
    """Low-rank vs sparse-direct timing table on oracle-sized grids."""
    rows = []
    run = runs[0]
    for lv, u in zip(run.levels, run.solutions):
        n = lv["n"]
        grid = GridSpec.square(n)
        if grid.total_points > 260_000:
            rows.append([lv["grid_size"], _fmt(lv["time_pcg"]),
                         lv["sol_rank"], ""])
            continue
        f_dense = to_dense(gaussian_rhs(grid, cfg.rhs_center, cfg.rhs_width))
        problem = dense_assemble(coeff, grid, rhs=f_dense.ravel())
        t0 = time.perf_counter()
        dense_solve_control(problem, cfg.gamma, formulation="modified")
        rows.append([lv["grid_size"], _fmt(lv["time_pcg"]), lv["sol_rank"],
                     _fmt(time.perf_counter() - t0)])
    _write_csv(os.path.join(out_dir, "direct_compare.csv"),
               ["grid_size", "time_pcg", "sol_rank", "time_direct"], rows)


def _emit_solutions(out_dir, runs):
    for r in runs:
        for lv, u in zip(r.levels, r.solutions):
            path = os.path.join(
                out_dir, f"solution_{r.precond}_L{lv['level']}.json")
            with open(path, "w") as fh:
                json.dump({"grid_size": lv["grid_size"],
                           "rank": u.rank,
                           "left": u.left.tolist(),
                           "right": u.right.tolist()}, fh)


def run_experiment(cfg: ExperimentConfig):
    """Execute the experiment and write all report files.

    Returns (summary dict, exit code); solver failures are recorded per
    level and do not abort the remaining levels.
    """
    cfg.validate()
    np.random.seed(cfg.seed)
    coeff = cfg.coefficient()
    os.makedirs(cfg.out_dir, exist_ok=True)
    runs = [_run_ladder(cfg, p, coeff) for p in cfg.preconditioners]

    _emit_iterations_table(cfg.out_dir, runs)
    _emit_residuals(cfg.out_dir, runs)
    _emit_rank_trace(cfg.out_dir, runs)
    _emit_intergrid(cfg.out_dir, runs)
    if cfg.dense_oracle:
        _emit_direct_compare(cfg, cfg.out_dir, runs, coeff)
    _emit_solutions(cfg.out_dir, runs)

    summary = {
        "version": __version__,
        "preset": cfg.preset,
        "formulation": cfg.formulation,
        "gamma": cfg.gamma,
        "levels": [int(level) for level in
                   range(cfg.l_min, cfg.l_max + 1)],
        "cascadic": cfg.cascadic,
        "eps_pcg": cfg.eps_pcg,
        "eps_trunc": cfg.eps_trunc,
        "seed": cfg.seed,
        "runs": [
            {
                "precond": r.precond,
                "accumulated_time": r.accumulated_time,
                "levels": [
                    {k: v for k, v in lv.items()
                     if k not in ("residuals", "rank_trace")}
                    for lv in r.levels
                ],
            }
            for r in runs
        ],
    }
    with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    with open(os.path.join(cfg.out_dir, "trace.json"), "w") as fh:
        json.dump(
            {r.precond: [{k: v for k, v in lv.items()} for lv in r.levels]
             for r in runs},
            fh,
        )
    exit_code = 2 if any(r.failed for r in runs) else 0
    return summary, exit_code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kroncontrol",
        description="Rank-structured elliptic optimal control experiments",
    )
    parser.add_argument("--preset", default="test2",
                        choices=("test1", "test2", "custom"))
    parser.add_argument("--coeff", default=None,
                        help="coefficient JSON file (preset=custom)")
    parser.add_argument("--formulation", default="modified",
                        choices=("modified", "primal"))
    parser.add_argument("--precond", nargs="+", default=["S2"],
                        choices=PRECOND_CHOICES)
    parser.add_argument("--gamma", type=float, default=1.0)
    parser.add_argument("--lmin", type=int, default=5)
    parser.add_argument("--lmax", type=int, default=8)
    parser.add_argument("--cascadic", action="store_true")
    parser.add_argument("--eps-pcg", type=float, default=1e-7)
    parser.add_argument("--eps-trunc", type=float, default=1e-8)
    parser.add_argument("--rank-precond", type=int, default=None)
    parser.add_argument("--rhs-width", type=float, default=0.15)
    parser.add_argument("--rhs-center", type=float, nargs=2,
                        default=(0.5, 0.5))
    parser.add_argument("--guess-rank-cap", type=int, default=None)
    parser.add_argument("--kmax", type=int, default=200)
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dense-oracle", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = ExperimentConfig(
        preset=args.preset,
        coefficient_file=args.coeff,
        formulation=args.formulation,
        preconditioners=tuple(args.precond),
        gamma=args.gamma,
        l_min=args.lmin,
        l_max=args.lmax,
        cascadic=args.cascadic,
        eps_pcg=args.eps_pcg,
        eps_trunc=args.eps_trunc,
        rank_precond=args.rank_precond,
        rhs_center=tuple(args.rhs_center),
        rhs_width=args.rhs_width,
        guess_rank_cap=args.guess_rank_cap,
        out_dir=args.out_dir,
        seed=args.seed,
        dense_oracle=args.dense_oracle,
        k_max=args.kmax,
    )
    try:
        summary, exit_code = run_experiment(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for run in summary["runs"]:
        for lv in run["levels"]:
            status = "ok" if lv["converged"] else "FAILED"
            print(f"[{run['precond']}] {lv['grid_size']}: "
                  f"{lv['iterations']} iterations, "
                  f"rank {lv['sol_rank']}, "
                  f"{lv['time_pcg']:.4f} s ({status})")
        if summary["cascadic"]:
            print(f"[{run['precond']}] accumulated time: "
                  f"{run['accumulated_time']:.4f} s")
    print(f"reports written to {cfg.out_dir}/")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
