"""Command-line entry point: ``mdplace <subcommand> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure,
4 device budget exhausted.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import io
from .distflow import solve_distflow
from .errors import BudgetExhausted, GridValidationError, NumericalError, ParseError, UnknownNode
from .estimator import DEFAULT_MAX_ITER, DEFAULT_TOL, estimate_state, initial_state
from .fixture import FixtureSpec, generate_fixture
from .noise import CASE_STUDY_NOISE, DeviceConfiguration, NoiseSpec, sample_measurements
from .placement import Thresholds, evaluate_configuration, greedy_place, sensitivity_sweep

log = logging.getLogger("mdplace")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_BUDGET = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()] if text else []


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed for noise streams")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for candidate scoring")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def _inputs(p: argparse.ArgumentParser, scenario=True, noise=True, thresholds=True) -> None:
    p.add_argument("--grid", required=True, type=Path)
    if scenario:
        p.add_argument("--scenario", required=True, type=Path)
    if noise:
        p.add_argument("--noise", type=Path, help="noise config JSON (default: case-study constants)")
    if thresholds:
        p.add_argument("--thresholds", type=Path, help="thresholds JSON (default: 0.3%% V², 5%% current)")


def _emit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--csv", action="store_true", help="also write per-node/per-line sigma tables")
    p.add_argument("--emit-dot", action="store_true", help="also write a Graphviz graph")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="mdplace", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixture", parents=[common], help="write the synthetic MV/LV test case")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--fixture-seed", type=int, default=1)
    p.add_argument("--mv", type=int, default=10)
    p.add_argument("--lv", type=int, default=75)

    p = sub.add_parser("loadflow", parents=[common], help="solve the load flow of a scenario")
    _inputs(p, noise=False, thresholds=False)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)

    p = sub.add_parser("sample", parents=[common], help="draw one noisy measurement realization")
    _inputs(p, thresholds=False)
    p.add_argument("--devices", type=_int_list, default=[])
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("estimate", parents=[common], help="estimate the grid state from a measurement file")
    p.add_argument("--grid", required=True, type=Path)
    p.add_argument("--measurements", required=True, type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)

    p = sub.add_parser("eval-config", parents=[common], help="Monte-Carlo uncertainty of one device set")
    _inputs(p)
    p.add_argument("--devices", type=_int_list, default=[])
    p.add_argument("--r", type=int, default=1000, dest="realizations")
    p.add_argument("--out", type=Path, required=True)
    _emit_flags(p)

    p = sub.add_parser("place", parents=[common], help="greedy device placement")
    _inputs(p)
    p.add_argument("--r-search", type=int, default=1000)
    p.add_argument("--r-final", type=int, default=20000)
    p.add_argument("--max-devices", type=int)
    p.add_argument("--out", type=Path, required=True)
    _emit_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="device count versus allowed uncertainty")
    _inputs(p, thresholds=False)
    p.add_argument("--thresholds", type=_float_list, required=True, help="comma-separated relative limits")
    p.add_argument("--quantity", choices=["voltage", "current", "both"], default="voltage")
    p.add_argument("--r-search", type=int, default=1000)
    p.add_argument("--max-devices", type=int)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _noise(args) -> tuple[NoiseSpec, int]:
    spec, file_seed = (CASE_STUDY_NOISE, None) if args.noise is None else io.parse_noise(args.noise)
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = file_seed if file_seed is not None else 0
    return spec, seed


def _truth(args):
    grid = io.parse_grid(args.grid)
    scenario = io.parse_scenario(args.scenario, grid)
    return grid, solve_distflow(grid, scenario)


def _thresholds(args) -> Thresholds:
    return Thresholds() if args.thresholds is None else io.parse_thresholds(args.thresholds)


def cmd_gen_fixture(args) -> int:
    spec = FixtureSpec(mv_count=args.mv, lv_count=args.lv, seed=args.fixture_seed)
    if (args.mv, args.lv) != (10, 75):
        # keep the default feeder/leaf proportions for other sizes
        subs = max(1, min(args.mv - 1, round(6 * args.mv / 10)))
        leaves = max(spec.hub_feeders + 2 * (subs - 1), round(43 * args.lv / 75))
        spec = FixtureSpec(mv_count=args.mv, lv_count=args.lv, seed=args.fixture_seed, substations=subs,
                           hub_feeders=min(11, leaves), leaf_count=leaves)
    grid, scenario = generate_fixture(spec)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    io.save_grid(grid, out / "grid.json")
    io.save_scenario(scenario, out / "scenario.json")
    io.save_noise(CASE_STUDY_NOISE, out / "noise.json", master_seed=getattr(args, "seed", 42))
    io.save_thresholds(Thresholds(), out / "thresholds.json")
    log.info("wrote %d-node fixture to %s", grid.n_nodes, out)
    return EXIT_OK


def cmd_loadflow(args) -> int:
    grid, state = _truth(args)
    io.save_state(grid, state, args.out)
    log.info("converged in %d iterations; max loading %.1f%%", state.iterations, 100 * state.loading(grid).max())
    return EXIT_OK


def cmd_sample(args) -> int:
    grid, state = _truth(args)
    spec, seed = _noise(args)
    z = sample_measurements(grid, state, DeviceConfiguration(args.devices), spec, seed, args.realization)
    io.save_measurements(z, args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    grid = io.parse_grid(args.grid)
    z = io.parse_measurements(args.measurements)
    for kind, element in z.layout:
        grid.check_node(element)
    trace: list = []
    state = estimate_state(grid, z, tol=args.tol, max_iter=args.max_iter, trace=trace)
    x0 = initial_state(grid, z)
    extra = {
        "master_seed": z.master_seed,
        "realization": z.realization,
        "initial_v0_sq": x0.v0_sq,
        "residual_norms": [t["weighted_residual_norm"][0] for t in trace],
        "max_steps": [t["max_step"][0] for t in trace],
    }
    io.save_state(grid, state, args.out, extra=extra)
    return EXIT_OK


def cmd_eval_config(args) -> int:
    grid, state = _truth(args)
    spec, seed = _noise(args)
    rep = evaluate_configuration(grid, state, args.devices, spec, _thresholds(args), args.realizations, seed)
    io._write_json(args.out, io.report_to_dict(rep))
    if args.csv:
        io.write_sigma_csv(rep, args.out.with_name(args.out.stem + "_nodes.csv"), args.out.with_name(args.out.stem + "_lines.csv"))
    if args.emit_dot:
        args.out.with_suffix(".dot").write_text(io.to_dot(grid, rep))
    log.info("j_inf = %.4g with %d violations", rep.j_inf, len(rep.violations))
    return EXIT_OK


def cmd_place(args) -> int:
    grid, state = _truth(args)
    spec, seed = _noise(args)
    meta = {"master_seed": seed, "r_search": args.r_search, "r_final": args.r_final}
    try:
        result = greedy_place(
            grid, state, spec, _thresholds(args),
            r_search=args.r_search, r_final=args.r_final, master_seed=seed,
            max_devices=args.max_devices, threads=getattr(args, "threads", 1),
            progress=lambda rec: log.info("placed node %d (j_inf %.3g)", rec.chosen, rec.j_inf),
        )
    except BudgetExhausted as exc:
        if exc.result is not None:
            io.emit_report(exc.result, grid, args.out, csv_out=args.csv, dot_out=args.emit_dot,
                           extra={**meta, "error": str(exc)})
        raise
    io.emit_report(result, grid, args.out, csv_out=args.csv, dot_out=args.emit_dot, extra=meta)
    log.info("placed %d devices: %s", result.n_devices, result.placements)
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid, state = _truth(args)
    spec, seed = _noise(args)
    points = sensitivity_sweep(
        grid, state, spec, args.thresholds, r_search=args.r_search, master_seed=seed,
        quantity=args.quantity, threads=getattr(args, "threads", 1), max_devices=args.max_devices,
    )
    io._write_json(
        args.out,
        {
            "master_seed": seed,
            "quantity": args.quantity,
            "r_search": args.r_search,
            "points": [
                {"threshold": p.threshold if math.isfinite(p.threshold) else None, "devices": p.devices,
                 "placements": list(p.placements)}
                for p in points
            ],
        },
    )
    return EXIT_OK


COMMANDS = {
    "gen-fixture": cmd_gen_fixture,
    "loadflow": cmd_loadflow,
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "eval-config": cmd_eval_config,
    "place": cmd_place,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ParseError, GridValidationError, UnknownNode, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
