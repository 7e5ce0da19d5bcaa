"""Command-line entry point: ``ftclab {gen,run,sweep,bounds}``.

Settings come from built-in defaults, then ``--config FILE``, then flags.
Exit codes: 0 success, 2 config or input error, 3 divergence,
4 run completed but a requested bound was not applicable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .algorithm import init_state, initial_models
from .errors import AdmissibilityError, ConvergenceError, DivergenceError, FTCError, InvalidInputError, InvalidParameterError
from .experiment import (
    CONSTRUCTIONS,
    DEFAULTS,
    SWEEP_VARIABLES,
    ExperimentConfig,
    bound_curves,
    build_graph,
    build_problem,
    build_sequence,
    load_config,
    merge_config,
    run_batch,
    run_sweep,
)
from .ftc import FACTOR_ORDERS, save_sequence
from .graphs import save_graph
from .metrics import centroid_error, consensus_error, stepsize_limits
from .problems import estimate_constants, save_problem, solve_centralized

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INADMISSIBLE = 4


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_artifact_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("graph and sequence")
    g.add_argument("--graph", help="topology as kind:n, e.g. path:16 or hypercube:4")
    g.add_argument("--graph-file", help="graph JSON written by 'gen graph'")
    g.add_argument("--construction", choices=CONSTRUCTIONS)
    g.add_argument("--order", choices=FACTOR_ORDERS, help="Laplacian factor order")
    g.add_argument("--seq-dir", help="sequence directory (implies --construction load)")
    g.add_argument("--truncate", type=int, metavar="TAU_PRIME", help="keep the first TAU_PRIME factors")
    g.add_argument("--target-eps", type=float, help="perturb the sequence to this eps_tau")
    g.add_argument("--perturb-seed", type=int)
    q = p.add_argument_group("problem")
    q.add_argument("--K", type=int, dest="K")
    q.add_argument("--N", type=int, dest="N")
    q.add_argument("--M", type=int, dest="M")
    q.add_argument("--rho", type=float)
    q.add_argument("--heterogeneity", type=float)
    q.add_argument("--problem-seed", type=int)
    q.add_argument("--problem-dir", help="problem directory written by 'gen problem'")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    r = p.add_argument_group("run")
    r.add_argument("--mu", type=float)
    r.add_argument("--iters", type=int, dest="num_iters")
    r.add_argument("--replications", type=int)
    r.add_argument("--record-every", type=int)
    r.add_argument("--mode", choices=("original", "transformed"))
    r.add_argument("--stochastic", dest="stochastic", action="store_true", default=None)
    r.add_argument("--deterministic", dest="stochastic", action="store_false")
    r.add_argument("--bounds", dest="bounds", action="store_true", default=None,
                   help="fill the bound columns of every trace")
    r.add_argument("--init-scale", type=float)
    r.add_argument("--init-seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand from resetting a global flag given before it.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="base run seed; replication r uses seed + r")
    common.add_argument("--jobs", type=int, help="worker processes for replications")

    parser = argparse.ArgumentParser(prog="ftclab", description="Gradient tracking with finite-time-consensus sequences.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="write a graph, sequence or problem to disk")
    gen.add_argument("subject", choices=("graph", "seq", "problem"))
    _add_artifact_flags(gen)

    run = sub.add_parser("run", parents=[common], help="run seeded replications of one configuration")
    _add_artifact_flags(run)
    _add_run_flags(run)

    sweep = sub.add_parser("sweep", parents=[common], help="run one batch per value of a swept variable")
    _add_artifact_flags(sweep)
    _add_run_flags(sweep)
    sweep.add_argument("--variable", choices=SWEEP_VARIABLES)
    sweep.add_argument("--values", type=_float_list, help="comma-separated sweep values")
    sweep.add_argument("--graphs", type=_str_list, help="tau sweep: comma-separated graph per value")
    sweep.add_argument("--mu-grid", type=_float_list, help="tau sweep: candidate step sizes")
    sweep.add_argument("--threshold", type=float, help="tau sweep: centroid error target")
    sweep.add_argument("--max-iters", type=int, help="tau sweep: iteration budget per candidate")

    bounds = sub.add_parser("bounds", parents=[common], help="estimate constants and print bound curves")
    _add_artifact_flags(bounds)
    _add_run_flags(bounds)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    a = vars(args)
    get = a.get
    seq = {
        "construction": "load" if get("seq_dir") else get("construction"),
        "dir": get("seq_dir"),
        "order": get("order"),
        "perturb_seed": get("perturb_seed"),
    }
    if get("truncate") is not None:
        seq.update(approximation="truncate", tau_prime=get("truncate"))
    if get("target_eps") is not None:
        seq.update(approximation="perturb", target_eps=get("target_eps"))
    graph = {"spec": get("graph"), "file": get("graph_file")}
    if get("graph"):
        graph["file"] = None
    return {
        "graph": graph,
        "sequence": seq,
        "problem": {
            "K": get("K"), "N": get("N"), "M": get("M"), "rho": get("rho"),
            "heterogeneity": get("heterogeneity"), "seed": get("problem_seed"), "dir": get("problem_dir"),
        },
        "run": {
            "mu": get("mu"), "num_iters": get("num_iters"), "replications": get("replications"),
            "record_every": get("record_every"), "mode": get("mode"), "stochastic": get("stochastic"),
            "seed": get("seed"), "init_scale": get("init_scale"), "init_seed": get("init_seed"),
            "bounds": get("bounds"),
        },
        "sweep": {
            "variable": get("variable"), "values": get("values"), "graphs": get("graphs"),
            "mu_grid": get("mu_grid"), "threshold": get("threshold"), "max_iters": get("max_iters"),
        },
        "out": get("out"),
        "jobs": get("jobs"),
    }


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Precedence: flags over config file over defaults."""
    path = getattr(args, "config", None)
    doc = load_config(path) if path else {}
    return ExperimentConfig.from_dict(merge_config(merge_config(DEFAULTS, doc), _overrides(args)))


def cmd_gen(cfg: ExperimentConfig, subject: str) -> int:
    out = Path(cfg.out)
    if subject == "graph":
        g = build_graph(cfg)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "graph.json"
        save_graph(g, path)
        print(f"graph {g.name} K={g.K} edges={len(g.edges)} diameter={g.diameter()} -> {path}")
    elif subject == "seq":
        seq = build_sequence(cfg)
        save_sequence(seq, out)
        comp = seq.compliance
        print(f"sequence tau={seq.tau} eps_tau={seq.eps_tau:.3e} "
              f"compliant={comp.overall_assumption4} -> {out}")
    else:
        p = build_problem(cfg)
        save_problem(p, out)
        print(f"problem K={p.K} N={p.N} M={p.M} rho={p.rho} -> {out}")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig) -> int:
    res = run_batch(cfg, cfg.out)
    s = res.summary
    if res.diverged:
        print(f"diverged in seeds {sorted(s['divergence_iterations'])}; partial traces in {cfg.out}", file=sys.stderr)
        return EXIT_DIVERGED
    adm = s["admissibility"]
    print(f"tau={s['tau']} eps_tau={s['eps_tau']:.3e} mu={s['mu']} steady_state_msd={s['steady_state_msd']:.6e} "
          f"thm1={'ok' if adm['thm1'] else 'n/a'} thm2={'ok' if adm['thm2'] else 'n/a'} -> {cfg.out}")
    if cfg.run["bounds"] and not (adm["thm1"] and adm["thm2"]):
        for key in ("thm1_reason", "thm2_reason"):
            if adm[key]:
                print(adm[key], file=sys.stderr)
        return EXIT_INADMISSIBLE
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    rows, _ = run_sweep(cfg, cfg.out)
    for r in rows:
        extra = "" if r["iters_to_threshold"] is None else f" iters_to_threshold={r['iters_to_threshold']}"
        print(f"{cfg.sweep['variable']}={r['value']} mu={r['mu']} steady_state_msd={r['steady_state_msd']:.6e}{extra}")
    return EXIT_OK


def cmd_bounds(cfg: ExperimentConfig, stream=None, write_report: bool = False) -> int:
    stream = sys.stdout if stream is None else stream
    seq = build_sequence(cfg)
    p = build_problem(cfg, seq.K)
    rc = cfg.run_config(0)
    w_opt = solve_centralized(p, tol=1e-10).w
    bp = estimate_constants(p, w_opt, rc.mu, seq, stochastic=rc.stochastic)
    s0 = init_state(p, rc.mu, cfg.run["mode"], initial_models(p, rc))
    rows, verdict = bound_curves(bp, rc.num_iters, consensus_error(s0), centroid_error(s0, w_opt))
    limits = stepsize_limits(bp)

    report = {
        "nu": bp.nu, "delta": bp.delta, "B": bp.B, "sigma2": bp.sigma2,
        "mu": bp.mu, "tau": bp.tau, "eps_tau": bp.eps_tau, "K": bp.K,
        "thm1_mu_max": limits.thm1_mu_max, "thm2_mu_max": limits.thm2_mu_max,
        "thm1": "applicable" if verdict.thm1 else f"not applicable: {verdict.thm1_reason}",
        "thm2": "applicable" if verdict.thm2 else f"not applicable: {verdict.thm2_reason}",
    }
    for key, val in report.items():
        stream.write(f"# {key}: {val}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(("iter", "thm1_bound", "thm2_bound"))
    for i, b1, b2 in rows:
        writer.writerow((i, "" if b1 is None else repr(b1), "" if b2 is None else repr(b2)))
    if write_report:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bounds.json").write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK if verdict.thm1 and verdict.thm2 else EXIT_INADMISSIBLE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "gen":
            return cmd_gen(cfg, args.subject)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_bounds(cfg, write_report=getattr(args, "out", None) is not None)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except AdmissibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (InvalidParameterError, InvalidInputError, ConvergenceError, FTCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
