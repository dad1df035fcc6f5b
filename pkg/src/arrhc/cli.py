"""Command-line front end.

Subcommands: ``validate`` (plant invariant report), ``certify``
(certificate tables and thresholds), ``simulate`` (one closed-loop run),
``sweep`` (a grid of runs in parallel), ``allocate`` (investment game and
cooperative program).  Exit codes: 0 ok, 1 usage, 2 invalid spec,
3 solver failure, 4 infeasible allocation.  Human-readable text goes to
stdout; machine-readable data only to files, written atomically.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import closedloop
from .allocation import cost_Ci, load_allocation_problem, solve_nash, solve_social, total_cost
from .certificates import CertificateTable, certificate_set, compute_lambda, table_for
from .errors import (
    ArrhcError,
    CertificateError,
    DomainError,
    InfeasibleError,
    InstabilityError,
    NumericsError,
)
from .matrixcore import spectral_radius
from .plant import load_system_spec, max_aux_input_over_X0
from .replay import gen_schedule

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID_SPEC = 2
EXIT_SOLVER_FAILURE = 3
EXIT_INFEASIBLE = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse's exit(2) onto the usage code
        raise UsageError(message)


def _parse_int_list(text: str) -> list[int]:
    """Accept '7', '2,5,9' or '2:6' (inclusive range)."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok]


def _parse_x0(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",") if tok.strip()])
    except ValueError as exc:
        raise UsageError(f"could not parse --x0 {text!r}: {exc}") from None


def _load_spec(args):
    try:
        return load_system_spec(args.spec, repair=args.repair)
    except (DomainError, InstabilityError, FileNotFoundError) as exc:
        raise _SpecError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {args.spec}: {exc}") from exc


class _SpecError(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="arrhc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--spec", required=True, help="plant spec JSON")
        p.add_argument("--repair", action="store_true",
                       help="replace a non-stabilizing gain by an LQ synthesis")
        p.add_argument("--lambda-mode", choices=("proof", "table"), default="proof")

    p = sub.add_parser("validate", help="check every plant invariant and report margins")
    add_common(p)

    p = sub.add_parser("certify", help="emit certificate tables over an (N, S) grid")
    add_common(p)
    p.add_argument("--N", required=True, help="horizons: '12', '2,5,9' or '2:40'")
    p.add_argument("--S", required=True, help="attack caps: same syntax")
    p.add_argument("--ncap", type=int, default=500, help="scan cap for thresholds")
    p.add_argument("--out", help="directory for certificates.json")

    p = sub.add_parser("simulate", help="run one closed loop under an attack schedule")
    add_common(p)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--S", type=int, required=True)
    p.add_argument("--schedule", choices=("none", "periodic_burst", "random", "greedy"),
                   default="greedy")
    p.add_argument("--period", type=int, help="idle gap for periodic_burst")
    p.add_argument("--seed", type=int, default=0, help="seed for random schedules")
    p.add_argument("--x0", required=True, help="initial state, comma-separated")
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--ncap", type=int, default=500)
    p.add_argument("--no-monitor", action="store_true",
                   help="skip the per-step Lyapunov solves")
    p.add_argument("--out", required=True, help="directory for trace.csv and summary.json")

    p = sub.add_parser("sweep", help="grid of closed-loop runs, one summary row per cell")
    add_common(p)
    p.add_argument("--N", required=True, help="horizon list/range")
    p.add_argument("--S", required=True, help="attack cap list/range")
    p.add_argument("--schedule", choices=("none", "periodic_burst", "random", "greedy"),
                   default="greedy")
    p.add_argument("--period", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", required=True)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--jobs", type=int, default=0, help="parallel workers (0 = auto)")
    p.add_argument("--out", required=True, help="directory for sweep.csv")

    p = sub.add_parser("allocate", help="solve the investment game / cooperative program")
    p.add_argument("--problem", required=True, help="allocation problem JSON")
    p.add_argument("--mode", choices=("nash", "social", "both"), default="both")
    p.add_argument("--out", help="directory for allocation.json")
    return parser


def _cmd_validate(args) -> int:
    spec = _load_spec(args)
    rho = spectral_radius(spec.Abar)
    residual = float(np.max(np.abs(spec.Abar.T @ spec.Pbar @ spec.Abar - spec.Pbar + spec.Qbar)))
    margins = max_aux_input_over_X0(spec)
    print(f"plant: n={spec.n} m={spec.m}  c={spec.c}  u_max={spec.u_max}")
    if spec.repaired:
        print(f"gain: configured K={spec.K_requested.tolist()} does not stabilize; "
              f"synthesized LQ gain K={np.round(spec.K, 6).tolist()}")
    else:
        print(f"gain: K={np.round(spec.K, 6).tolist()} (as configured)")
    print(f"closed-loop spectral radius: {rho:.6f}")
    print(f"Lyapunov residual: {residual:.3e}")
    for j, worst in enumerate(margins):
        print(f"input row {j + 1}: max |K_j x| over the state set = {worst:.6g} "
              f"(bound {spec.u_max})")
    for mode in ("proof", "table"):
        try:
            lam = compute_lambda(spec, mode)
            print(f"contraction factor ({mode} mode): {lam:.6f}")
        except CertificateError as exc:
            print(f"contraction factor ({mode} mode): invalid ({exc})")
    print("spec ok")
    return EXIT_OK


def _threshold_row(table: CertificateTable, S: int, ncap: int) -> dict:
    row: dict = {"S": S}
    for key, fn in (("Nstar", table.Nstar), ("Nhat_star", table.Nhat_star)):
        try:
            row[key] = fn(S, ncap)
        except (CertificateError, DomainError) as exc:
            row[key] = None
            row[f"{key}_note"] = str(exc)
    for key, fn in (("PiE", table.PiE), ("PiA", table.PiA)):
        try:
            row[key] = fn(S)
        except DomainError:
            row[key] = None
    return row


def _cmd_certify(args) -> int:
    spec = _load_spec(args)
    Ns = _parse_int_list(args.N)
    Ss = _parse_int_list(args.S)
    if not Ns or not Ss:
        raise UsageError("empty certificate grid: check --N and --S")
    table = table_for(spec, args.lambda_mode)
    for mode in ("proof", "table"):
        try:
            print(f"lambda ({mode} mode): {compute_lambda(spec, mode):.9f}")
        except CertificateError as exc:
            print(f"lambda ({mode} mode): invalid ({exc})")
    print(f"using {args.lambda_mode} mode: chi={table.chi:.9f} psi={table.psi:.6f} "
          f"phi_inf={table.phi_inf:.6f}")

    grid = []
    header = f"{'N':>5} {'S':>3} {'phi_N':>12} {'alpha_N':>12} {'rho_N':>12} {'gamma':>12} {'gamma_hat':>12} {'beta':>12}"
    print(header)
    for N in Ns:
        for S in Ss:
            cs = certificate_set(spec, N, S, args.lambda_mode)
            grid.append({"N": N, "S": S, **cs.to_dict()})
            cells = [
                f"{N:>5}", f"{S:>3}", f"{cs.phi_N:>12.5g}", f"{cs.alpha_N:>12.5g}",
                f"{cs.rho_N:>12.5g}" if cs.rho_N is not None else f"{'-':>12}",
                f"{cs.gamma:>12.5g}" if cs.gamma is not None else f"{'-':>12}",
                f"{cs.gamma_hat:>12.5g}" if cs.gamma_hat is not None else f"{'-':>12}",
                f"{cs.beta:>12.5g}" if cs.beta is not None else f"{'-':>12}",
            ]
            print(" ".join(cells))

    thresholds = [_threshold_row(table, S, args.ncap) for S in sorted(set(Ss)) if S >= 1]
    print(f"{'S':>3} {'N*':>8} {'Nhat*':>8} {'Pi_E':>10} {'Pi_A':>10}")
    for row in thresholds:
        print(" ".join([
            f"{row['S']:>3}",
            f"{row['Nstar']:>8}" if row.get("Nstar") is not None else f"{'>cap':>8}",
            f"{row['Nhat_star']:>8}" if row.get("Nhat_star") is not None else f"{'>cap':>8}",
            f"{row['PiE']:>10.1f}" if row.get("PiE") is not None else f"{'-':>10}",
            f"{row['PiA']:>10.1f}" if row.get("PiA") is not None else f"{'-':>10}",
        ]))
    security = []
    for N in sorted(set(Ns)):
        if N < 3:
            continue
        security.append({"N": N, "Sstar": table.Sstar(N), "Shat_star": table.Shat_star(N)})
    if security:
        print(f"{'N':>5} {'S*':>4} {'Shat*':>6}")
        for row in security:
            print(f"{row['N']:>5} {row['Sstar']:>4} {row['Shat_star']:>6}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "lambda_mode": args.lambda_mode,
            "lam": table.lam,
            "chi": table.chi,
            "psi": table.psi,
            "phi_inf": table.phi_inf,
            "grid": grid,
            "thresholds": thresholds,
            "security_levels": security,
        }
        closedloop._atomic_write(out / "certificates.json", json.dumps(payload, indent=2) + "\n")
        print(f"wrote {out / 'certificates.json'}")
    return EXIT_OK


def _make_schedule(args, S):
    return gen_schedule(args.schedule, S=S, T=args.T, period=args.period, seed=args.seed)


def _cmd_simulate(args) -> int:
    spec = _load_spec(args)
    x0 = _parse_x0(args.x0)
    try:
        schedule = _make_schedule(args, args.S)
        trace = closedloop.run_closed_loop(
            spec, args.N, schedule, x0,
            lyapunov_monitor=not args.no_monitor,
            lambda_mode=args.lambda_mode,
        )
    except (DomainError, InfeasibleError) as exc:
        raise UsageError(str(exc)) from exc

    Nstar = None
    try:
        Nstar = table_for(spec, args.lambda_mode).Nstar(args.S, args.ncap) if args.S >= 1 else None
    except (CertificateError, DomainError):
        Nstar = None
    certified = Nstar is not None and args.N >= Nstar + 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    closedloop.write_trace_csv(trace, out / "trace.csv")
    summary = closedloop.summarize_trace(trace, Nstar=Nstar)
    closedloop.write_summary_json(summary, out / "summary.json")

    norms = (trace.states**2).sum(axis=1)
    settle = next((int(k) for k, v in enumerate(norms) if v < 1e-6), None)
    print(f"steps: {trace.T} (early stop: {trace.stopped_early})")
    print(f"gamma: {summary['gamma']}  Nstar: {Nstar}  certified: {certified}")
    print(f"total cost: {summary['total_cost']:.6g}" +
          (f"  bound: {summary['cost_bound']:.6g}" if summary["cost_bound"] else ""))
    print(f"settling step (|x|^2 < 1e-6): {settle}")
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.json'}")
    if not certified:
        print("status: uncertified (no threshold certificate covers this N, S)")
        return EXIT_OK
    if summary["decay_ok"] and summary["cost_ok"]:
        print("status: certified, decay and cost bounds hold")
        return EXIT_OK
    print("status: certified bounds VIOLATED")
    return EXIT_SOLVER_FAILURE


def _sweep_cell(payload) -> dict:
    (spec_path, repair, lambda_mode, N, S, kind, period, seed, x0, T) = payload
    spec = load_system_spec(spec_path, repair=repair)
    schedule = gen_schedule(kind, S=S, T=T, period=period, seed=seed)
    row = {"N": N, "S": S, "schedule": kind, "seed": seed, "T": T}
    try:
        trace = closedloop.run_closed_loop(
            spec, N, schedule, np.array(x0), lambda_mode=lambda_mode
        )
    except ArrhcError as exc:
        row.update(error=str(exc))
        return row
    summary = closedloop.summarize_trace(trace)
    norms = (trace.states**2).sum(axis=1)
    settle = next((int(k) for k, v in enumerate(norms) if v < 1e-6), None)
    row.update(
        gamma=summary["gamma"], total_cost=summary["total_cost"],
        cost_bound=summary["cost_bound"], decay_ok=summary["decay_ok"],
        cost_ok=summary["cost_ok"], steps=trace.T, settling=settle,
    )
    return row


def _cmd_sweep(args) -> int:
    _load_spec(args)  # fail fast on a bad spec before spawning workers
    Ns = _parse_int_list(args.N)
    Ss = _parse_int_list(args.S)
    if not Ns or not Ss:
        raise UsageError("empty sweep grid: check --N and --S")
    x0 = tuple(_parse_x0(args.x0).tolist())
    cells = [
        (args.spec, args.repair, args.lambda_mode, N, S, args.schedule,
         args.period, args.seed, x0, args.T)
        for N in Ns for S in Ss if N >= S + 1
    ]
    if not cells:
        raise UsageError("every grid cell violates N >= S + 1")
    jobs = args.jobs or min(len(cells), os.cpu_count() or 1)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r["N"], r["S"]))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["N", "S", "schedule", "seed", "T", "gamma", "total_cost",
               "cost_bound", "decay_ok", "cost_ok", "steps", "settling", "error"]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join("" if row.get(c) is None else str(row.get(c)) for c in columns))
    closedloop._atomic_write(out / "sweep.csv", "\n".join(lines) + "\n")
    print(f"swept {len(rows)} cells with {jobs} worker(s)")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_allocate(args) -> int:
    try:
        problem = load_allocation_problem(args.problem)
    except json.JSONDecodeError as exc:
        raise UsageError(
            f"malformed JSON in {args.problem} at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc

    results: dict = {"cap": problem.cap, "y_cap": problem.y_cap()}
    if not math.isfinite(results["y_cap"]):
        results["y_cap"] = None
    print(f"players: {problem.V}  cap: {problem.cap}")
    nash = social = None
    if args.mode in ("nash", "both"):
        nash = solve_nash(problem)
        results["nash"] = {
            "investments": nash.investments.tolist(),
            "total_cost": total_cost(problem, nash.investments),
            "costs": [cost_Ci(problem, i, nash.investments) for i in range(problem.V)],
            "residual": nash.residual,
            "rounds": nash.rounds,
            "cap_slack": problem.feasibility_margin(nash.investments),
        }
        print(f"competitive: M = {np.round(nash.investments, 8).tolist()} "
              f"(residual {nash.residual:.2e}, rounds {nash.rounds})")
        print(f"  per-player costs: {[round(c, 6) for c in results['nash']['costs']]}")
        print(f"  cap slack: {results['nash']['cap_slack']:.6g}")
    if args.mode in ("social", "both"):
        social = solve_social(problem)
        results["social"] = {
            "investments": social.investments.tolist(),
            "total_cost": social.value,
            "residual": social.residual,
            "iterations": social.iterations,
            "cap_slack": problem.feasibility_margin(social.investments),
        }
        print(f"cooperative: M = {np.round(social.investments, 8).tolist()} "
              f"(residual {social.residual:.2e}, iterations {social.iterations})")
        print(f"  total cost: {social.value:.6g}")
    if nash is not None and social is not None:
        gap = total_cost(problem, nash.investments) - social.value
        print(f"total-cost gap (competitive - cooperative): {gap:.6g}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        closedloop._atomic_write(out / "allocation.json", json.dumps(results, indent=2) + "\n")
        print(f"wrote {out / 'allocation.json'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "allocate":
            return _cmd_allocate(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_INVALID_SPEC
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericsError, CertificateError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
