"""Command-line surface: simulate, estimate, check-assumptions, sweep.

Exit codes: 0 success, 1 check failure / runtime error, 2 input or config
error, 3 non-convergence (estimate). Every command is a pure function of
(config bytes, input file bytes); --threads affects speed only.
"""

from __future__ import annotations

import argparse
import io
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .consistency import (
    check_assumption_iv,
    check_assumption_v,
    check_identifiability,
    check_lemma_approximations,
    run_consistency_sweep,
    write_assumption_iv_csv,
    write_consistency_csv,
)
from .core import derive_stream
from .likelihood import BallSupConfig, log_density_tuple, objective, sup_log_density_ball
from .measurement import (
    CsvFormatError,
    read_measurement_csv,
    simulate_scenario,
    simulate_tuple,
    write_measurement_csv,
)
from .solver import estimate

_TAG_SOLVER = 21

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_NOCONV = 3


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def cmd_simulate(config_path: str, out_path: str,
                 seed_override: int | None = None) -> int:
    cfg = load_config(config_path, seed_override)
    meas = simulate_scenario(cfg.scenario)
    write_measurement_csv(out_path, cfg.scenario.sites, meas)
    return EXIT_OK


def cmd_estimate(config_path: str, measurements_csv: str, out_path: str,
                 seed_override: int | None = None) -> int:
    cfg = load_config(config_path, seed_override)
    sites, meas = read_measurement_csv(measurements_csv)
    res = estimate(sites, meas, cfg.scenario.bounds, cfg.solver,
                   derive_stream(cfg.seed, _TAG_SOLVER))
    breakdown = objective(res.estimate, sites, meas)
    lines = [
        f"rx = {_fmt(res.estimate.r[0])}", f"ry = {_fmt(res.estimate.r[1])}",
        f"rz = {_fmt(res.estimate.r[2])}", f"vx = {_fmt(res.estimate.v[0])}",
        f"vy = {_fmt(res.estimate.v[1])}", f"vz = {_fmt(res.estimate.v[2])}",
        f"objective_total = {_fmt(breakdown.total)}",
        f"objective_range = {_fmt(breakdown.range_term)}",
        f"objective_angle = {_fmt(breakdown.angle_term)}",
        f"objective_doppler = {_fmt(breakdown.doppler_term)}",
        f"converged = {str(res.converged).lower()}",
        f"iterations = {res.iterations}",
        f"gradient_norm = {_fmt(res.gradient_norm)}",
        f"start_index = {res.start_index}",
    ]
    _atomic_write(out_path, "\n".join(lines) + "\n")
    print(f"position: {res.estimate.r.tolist()}")
    print(f"velocity: {res.estimate.v.tolist()}")
    return EXIT_OK if res.converged else EXIT_NOCONV


def _ball_sup_self_test(cfg) -> bool:
    """Determinism and dominance self-test of the ball-sup approximation."""
    scn = cfg.scenario
    site = scn.sites[0]
    x = simulate_tuple(scn.truth, site, derive_stream(scn.seed, 999))
    ball = BallSupConfig(rho=cfg.assumptions.rho,
                         num_probes=cfg.assumptions.num_probes_ball)
    probe = cfg.assumptions.probe_states[0]
    a = sup_log_density_ball(x, site, probe, ball, scn.bounds)
    b = sup_log_density_ball(x, site, probe, ball, scn.bounds)
    center = log_density_tuple(x, site, probe)
    return a == b and a >= center


def cmd_check_assumptions(config_path: str, out_dir: str,
                          seed_override: int | None = None) -> int:
    cfg = load_config(config_path, seed_override)
    scn = cfg.scenario
    os.makedirs(out_dir, exist_ok=True)

    ident_ok = check_identifiability(scn, cfg.assumptions)
    ball_ok = _ball_sup_self_test(cfg)
    iv_stats = check_assumption_iv(scn, cfg.assumptions)
    iv_ok = all(st.passed for st in iv_stats)
    v_report = check_assumption_v(scn, cfg.assumptions)
    y = scn.truth.r - scn.sites[0].s
    yn = float(np.linalg.norm(y))
    lemmas = check_lemma_approximations(
        y, scn.truth.v, [1e-2 * yn, 5e-3 * yn, 2.5e-3 * yn])

    write_assumption_iv_csv(os.path.join(out_dir, "assumption_iv.csv"), iv_stats)
    results = {
        "assumption_ii_identifiability": ident_ok,
        "assumption_iii_ball_sup": ball_ok,
        "assumption_iv_mean_drift": iv_ok,
        "assumption_v_variance_summability": v_report.bounded,
        "expansion_approximation_order": lemmas.passed,
    }
    buf = io.StringIO()
    for name, ok in results.items():
        line = f"{name}: {'PASS' if ok else 'FAIL'}"
        buf.write(line + "\n")
        print(line)
    _atomic_write(os.path.join(out_dir, "summary.txt"), buf.getvalue())
    return EXIT_OK if all(results.values()) else EXIT_FAIL


def cmd_sweep(config_path: str, out_dir: str, seed_override: int | None = None,
              threads: int = 1) -> int:
    cfg = load_config(config_path, seed_override)
    os.makedirs(out_dir, exist_ok=True)
    report = run_consistency_sweep(cfg.scenario, cfg.sweep.radar_counts,
                                   cfg.sweep.trials, cfg.solver,
                                   n_jobs=(threads if threads != 0 else -1))
    write_consistency_csv(os.path.join(out_dir, "consistency.csv"), report)
    medians = [q.q50 for q in report.error_quantiles_position]
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    for n, med in zip(report.radar_counts, medians):
        print(f"N={n}: median position error {med:.3f} m")
    return EXIT_OK if decreasing else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbitmle",
        description="Radar-network orbit state MLE and consistency experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")

    p = sub.add_parser("simulate", help="write a measurement CSV")
    add_common(p)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("estimate", help="solve the MLE from a measurement CSV")
    add_common(p)
    p.add_argument("--measurements", required=True, help="input measurement CSV")
    p.add_argument("--out", required=True, help="output result file")

    p = sub.add_parser("check-assumptions",
                       help="run the consistency-condition checks")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="run the convergence sweep")
    add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="parallel trial workers (0 = auto); results identical")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == "estimate":
            return cmd_estimate(args.config, args.measurements, args.out, args.seed)
        if args.command == "check-assumptions":
            return cmd_check_assumptions(args.config, args.out, args.seed)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.out, args.seed, args.threads)
        raise AssertionError(args.command)
    except (ConfigError, CsvFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
