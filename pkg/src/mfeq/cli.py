"""Command line front end: model files in, equilibria/reports/CSV out.

Exit codes: 0 success, 1 input error, 2 solve non-convergence or simulation
error bound exceeded, 3 verification violations.  All artifacts are
deterministic functions of the inputs (and the seed), so repeated runs are
byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .chain import FlowCurve, ProbabilityVector, StrategyTable, TimeGrid, propagate_flow
from .errors import MfeqError, ModelFileError
from .modelfile import build_model, model_hash, read_model_file
from .simulate import SimConfig, deviation_test, simulate
from .solver import Equilibrium, IterationDiagnostics, SolverOptions, estimate_constants, picard_solve
from .verify import verify_local_optimality

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_BOUND_EXCEEDED = 2
EXIT_VIOLATIONS = 3


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(float(x)) for x in row) + "\n")


def _read_csv(path: Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_rho(text: str | None, m: int) -> ProbabilityVector:
    if text is None:
        return ProbabilityVector.uniform(m)
    parts = [float(p) for p in text.split(",")]
    if len(parts) != m:
        raise ModelFileError("init-rho", f"expected {m} probabilities, got {len(parts)}")
    return ProbabilityVector(parts)


def cmd_solve(args) -> int:
    try:
        model = read_model_file(args.model)
        grid = TimeGrid(model["horizon"], args.grid)
        gen, cost = build_model(model, grid)
        rho = _parse_rho(args.init_rho, model["states"])
    except (MfeqError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    opts = SolverOptions(tolerance=args.tol, max_iterations=args.max_iter,
                         relaxation=args.relax)
    eq = picard_solve(gen, cost, rho, grid, opts)
    contraction = estimate_constants(gen, cost, grid, seed=0)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "model.json", model)
    nodes = grid.nodes
    _write_csv(out / "flow.csv",
               ["t"] + [f"nu_{i + 1}" for i in range(gen.m)],
               (np.concatenate([[nodes[k]], eq.flow.values[k]])
                for k in range(grid.steps + 1)))
    _write_csv(out / "policy.csv",
               ["t"] + [f"pi_{i + 1}" for i in range(gen.m)],
               (np.concatenate([[nodes[k]], eq.policy.actions[k]])
                for k in range(grid.steps)))
    diag_vals = eq.values.diagonal()
    _write_csv(out / "theta_diag.csv",
               ["t"] + [f"theta_{i + 1}" for i in range(gen.m)],
               (np.concatenate([[nodes[k]], diag_vals[k]])
                for k in range(grid.steps + 1)))
    _write_json(out / "equilibrium.json", {
        "schema": 1,
        "model_hash": model_hash(model),
        "grid": {"horizon": grid.horizon, "steps": grid.steps},
        "rho": eq.rho.tolist(),
        "policy": eq.policy.actions.tolist(),
        "diagnostics": {
            "converged": eq.converged,
            "iterations": eq.diagnostics.iterations,
            "gaps": eq.diagnostics.gaps,
            "ratio": eq.diagnostics.ratio if eq.diagnostics.ratios else None,
        },
        "contraction": {
            "kappa1": contraction.kappa1,
            "kappa2": contraction.kappa2,
            "kappa3": contraction.kappa3,
            "product": contraction.product,
            "verdict": contraction.verdict,
            "note": contraction.note,
        },
    })
    status = "converged" if eq.converged else "NOT converged"
    print(f"solve: {status} after {eq.diagnostics.iterations} iterations "
          f"(final gap {eq.diagnostics.gaps[-1]:.3e}); "
          f"contraction product {contraction.product:.4g} -> {contraction.verdict}")
    return EXIT_OK if eq.converged else EXIT_NOT_CONVERGED


def _load_equilibrium(eq_dir: Path):
    if not eq_dir.is_dir():
        raise ModelFileError("", f"equilibrium directory not found: {eq_dir}")
    model = read_model_file(eq_dir / "model.json")
    meta = json.loads((eq_dir / "equilibrium.json").read_text(encoding="utf-8"))
    if meta.get("model_hash") != model_hash(model):
        raise ModelFileError("model_hash",
                             "equilibrium was produced from a different model")
    grid = TimeGrid(meta["grid"]["horizon"], meta["grid"]["steps"])
    gen, cost = build_model(model, grid)
    policy_rows = _read_csv(eq_dir / "policy.csv")
    if policy_rows.shape != (grid.steps, gen.m + 1):
        raise ModelFileError("policy.csv",
                             f"expected {grid.steps} rows of {gen.m + 1} columns")
    policy = StrategyTable(policy_rows[:, 1:], grid)
    rho = np.asarray(meta["rho"], dtype=float)
    # the flow argument of the spike test is the pair's own flow, so it is
    # re-propagated from the stored policy rather than trusted from disk
    flow = propagate_flow(gen, rho, policy, grid)
    diag = IterationDiagnostics(gaps=list(meta["diagnostics"]["gaps"]),
                                iterations=meta["diagnostics"]["iterations"],
                                converged=meta["diagnostics"]["converged"])
    eq = Equilibrium(rho=rho, flow=flow, policy=policy, values=None,
                     diagnostics=diag, grid=grid)
    return model, gen, cost, eq


def cmd_verify(args) -> int:
    try:
        model, gen, cost, eq = _load_equilibrium(Path(args.eq))
        tol = None if args.tol_spike == "auto" else float(args.tol_spike)
    except (MfeqError, ValueError, OSError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    report = verify_local_optimality(eq, gen, cost,
                                     action_samples=args.action_samples,
                                     tol_spike=tol)
    out = Path(args.eq)
    nodes = eq.grid.nodes
    _write_csv(out / "spike_report.csv",
               ["t", "state", "action", "gap"],
               ([nodes[e.node], e.state + 1, e.action, e.gap]
                for e in report.entries))
    _write_json(out / "spike_summary.json", {
        "tolerance": report.tol,
        "min_gap": report.min_gap,
        "perturbations": len(report.entries),
        "violations": [
            {"t": nodes[e.node], "state": e.state + 1, "action": e.action,
             "gap": e.gap}
            for e in report.violations
        ],
    })
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_VIOLATIONS


def cmd_simulate(args) -> int:
    try:
        model, gen, cost, eq = _load_equilibrium(Path(args.eq))
        cfg = SimConfig(players=args.players, seed=args.seed,
                        replications=args.reps)
        flow_csv = _read_csv(Path(args.eq) / "flow.csv")
        nu_star = FlowCurve(flow_csv[:, 1:], eq.grid)
    except (MfeqError, ValueError, OSError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    errors = []
    mean_emp = np.zeros_like(nu_star.values)
    for rep in range(cfg.replications):
        bundle = simulate(gen, eq.policy, eq.rho, eq.grid, cfg, replication=rep)
        emp = bundle.empirical_flow()
        mean_emp += emp
        errors.append(float(np.abs(emp - nu_star.values).sum(axis=1).max()))
    mean_emp /= cfg.replications
    frac_ok = float(np.mean([e <= args.err_bound for e in errors]))

    if args.spike is not None:
        parts = args.spike.split(",")
        spike = (int(parts[0]), int(parts[1]) - 1, float(parts[2]))
    else:
        node = eq.grid.steps // 2
        state = int(np.argmax(eq.rho))
        lo, hi = gen.action_interval(eq.grid.nodes[node], state)
        spike = (node, state, hi)
    dev = deviation_test(eq, gen, cost, k_player=0, spike=spike, cfg=cfg,
                         inner_pairs=args.inner_pairs)

    out = Path(args.eq)
    nodes = eq.grid.nodes
    _write_csv(out / "empirical_flow.csv",
               ["t"] + [f"nuhat_{i + 1}" for i in range(gen.m)],
               (np.concatenate([[nodes[k]], mean_emp[k]])
                for k in range(eq.grid.steps + 1)))
    _write_json(out / "sim_report.json", {
        "players": cfg.players,
        "seed": cfg.seed,
        "replications": cfg.replications,
        "sup_tv_errors": errors,
        "sup_tv_error_mean": float(np.mean(errors)),
        "err_bound": args.err_bound,
        "fraction_within_bound": frac_ok,
        "deviation_test": {
            "spike_node": spike[0],
            "spike_state": spike[1] + 1,
            "spike_action": spike[2],
            "gap": dev.gap,
            "stderr": dev.stderr,
            "ci": [dev.ci_low, dev.ci_high],
            "pairs": dev.pairs,
        },
    })
    passed = frac_ok >= 0.95
    print(f"simulate: mean sup-TV error {np.mean(errors):.4f}, "
          f"{frac_ok * 100:.0f}% of {cfg.replications} replications within "
          f"{args.err_bound}; deviation gap {dev.gap:.4f} "
          f"[{dev.ci_low:.4f}, {dev.ci_high:.4f}]")
    return EXIT_OK if passed else EXIT_BOUND_EXCEEDED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfeq",
        description="Equilibrium solver for time-inconsistent, "
                    "distribution-dependent control of finite-state chains")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="compute an equilibrium from a model file")
    p.add_argument("--model", required=True, help="model file path or builtin name")
    p.add_argument("--grid", type=int, required=True, help="number of time steps")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--relax", type=float, default=1.0)
    p.add_argument("--init-rho", default=None,
                   help="comma-separated initial probabilities (default uniform)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="spike-perturbation check of a solved equilibrium")
    p.add_argument("--eq", required=True, help="equilibrium directory from solve")
    p.add_argument("--action-samples", type=int, default=16)
    p.add_argument("--tol-spike", default="auto",
                   help="violation tolerance (default 5*dt)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="many-player Monte Carlo validation")
    p.add_argument("--eq", required=True, help="equilibrium directory from solve")
    p.add_argument("--players", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--err-bound", type=float, default=0.05)
    p.add_argument("--spike", default=None,
                   help="deviation test spike as node,state,action "
                        "(default: midpoint node, heaviest state, upper action)")
    p.add_argument("--inner-pairs", type=int, default=200)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MfeqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
