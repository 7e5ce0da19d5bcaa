"""Config-driven experiment batches: build artifacts, run seeded replications, sweep.

A config is one JSON document with the sections ``graph``, ``sequence``,
``problem``, ``run`` and ``sweep``.  Missing keys take the values in
:data:`DEFAULTS`; callers layer command-line overrides on top with
:func:`merge_config`.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algorithm import STEPPERS, RunConfig, init_state, initial_models, run
from .errors import AdmissibilityError, DivergenceError, InvalidInputError, InvalidParameterError
from .ftc import (
    FACTOR_ORDERS,
    MatrixSeq,
    hypercube_sequence,
    laplacian_factor_sequence,
    load_sequence,
    perturb_sequence,
    truncate_sequence,
)
from .graphs import Graph, load_graph, parse_topology
from .metrics import (
    Trace,
    centroid_error,
    consensus_error,
    mean_trace,
    stepsize_limits,
    steady_state_msd,
    thm1_bound,
    thm2_bound,
)
from .problems import EXPERIMENT_DEFAULTS, BoundParams, Problem, estimate_constants, generate_logistic, load_problem, solve_centralized

CONSTRUCTIONS = ("hypercube", "laplacian_factor", "load")
APPROXIMATIONS = ("none", "truncate", "perturb")
SWEEP_VARIABLES = ("eps_tau", "tau", "mu")
STEADY_STATE_FRACTION = 0.2
SWEEP_COLUMNS = ("value", "mu", "steady_state_msd", "final_consensus_err", "iters_to_threshold")

DEFAULTS = {
    "graph": {"spec": "path:16", "file": None},
    "sequence": {
        "construction": "laplacian_factor",
        "order": "leja",
        "dir": None,
        "approximation": "none",
        "tau_prime": None,
        "target_eps": None,
        "perturb_seed": 0,
    },
    "problem": {
        "K": None,  # None: match the graph
        "N": EXPERIMENT_DEFAULTS["N"],
        "M": EXPERIMENT_DEFAULTS["M"],
        "rho": EXPERIMENT_DEFAULTS["rho"],
        "heterogeneity": 0.0,
        "seed": 0,
        "dir": None,
    },
    "run": {
        "mu": 0.1,
        "num_iters": 1000,
        "stochastic": True,
        "replications": 10,
        "record_every": 1,
        "mode": "original",
        "seed": 0,
        "init_scale": 0.0,
        "init_seed": 0,
        "bounds": False,
    },
    "sweep": {
        "variable": "eps_tau",
        "values": [0.0, 0.1, 0.2, 0.3],
        "graphs": None,
        "mu_grid": [0.4, 0.2, 0.1, 0.05, 0.02, 0.01],
        "threshold": 1e-6,
        "max_iters": 20000,
    },
    "out": "out",
    "jobs": 1,
}


def merge_config(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins, ``None`` values in it are ignored."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        if val is None:
            continue
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidParameterError(f"config {path} must be a JSON object")
    return doc


@dataclass(frozen=True)
class ExperimentConfig:
    graph: dict
    sequence: dict
    problem: dict
    run: dict
    sweep: dict
    out: str
    jobs: int

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise InvalidParameterError(f"unknown config sections {sorted(unknown)}")
        for section in ("graph", "sequence", "problem", "run", "sweep"):
            extra = set(doc.get(section) or {}) - set(DEFAULTS[section])
            if extra:
                raise InvalidParameterError(f"unknown keys in {section}: {sorted(extra)}")
        full = merge_config(DEFAULTS, doc)
        cfg = cls(**full)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        s, r, sw = self.sequence, self.run, self.sweep
        if s["construction"] not in CONSTRUCTIONS:
            raise InvalidParameterError(f"construction must be one of {CONSTRUCTIONS}")
        if s["order"] not in FACTOR_ORDERS:
            raise InvalidParameterError(f"order must be one of {FACTOR_ORDERS}")
        if s["approximation"] not in APPROXIMATIONS:
            raise InvalidParameterError(f"approximation must be one of {APPROXIMATIONS}")
        if s["approximation"] == "truncate" and s["tau_prime"] is None:
            raise InvalidParameterError("truncate needs sequence.tau_prime")
        if s["approximation"] == "perturb" and s["target_eps"] is None:
            raise InvalidParameterError("perturb needs sequence.target_eps")
        if s["construction"] == "load" and not s["dir"]:
            raise InvalidParameterError("construction 'load' needs sequence.dir")
        if r["mode"] not in STEPPERS:
            raise InvalidParameterError(f"mode must be one of {tuple(STEPPERS)}")
        if int(r["replications"]) < 1:
            raise InvalidParameterError("replications must be >= 1")
        if int(self.jobs) < 1:
            raise InvalidParameterError("jobs must be >= 1")
        if sw["variable"] not in SWEEP_VARIABLES:
            raise InvalidParameterError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if not sw["values"]:
            raise InvalidParameterError("sweep values must be nonempty")
        if not sw["mu_grid"]:
            raise InvalidParameterError("sweep mu_grid must be nonempty")
        self.run_config(0)  # RunConfig validates mu, num_iters, record_every

    def run_config(self, replication: int) -> RunConfig:
        r = self.run
        return RunConfig(
            mu=float(r["mu"]),
            num_iters=int(r["num_iters"]),
            stochastic=bool(r["stochastic"]),
            seed=int(r["seed"]) + replication,
            record_every=int(r["record_every"]),
            init_scale=float(r["init_scale"]),
            init_seed=int(r["init_seed"]),
        )

    def with_changes(self, **sections) -> "ExperimentConfig":
        doc = self.to_dict()
        return ExperimentConfig.from_dict(merge_config(doc, sections))

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}


def build_graph(cfg: ExperimentConfig) -> Graph:
    if cfg.graph.get("file"):
        return load_graph(cfg.graph["file"])
    return parse_topology(cfg.graph["spec"])


def build_sequence(cfg: ExperimentConfig, graph: Graph | None = None) -> MatrixSeq:
    s = cfg.sequence
    if s["construction"] == "load":
        seq = load_sequence(s["dir"])
    else:
        graph = build_graph(cfg) if graph is None else graph
        if s["construction"] == "hypercube":
            d = int(round(math.log2(graph.K)))
            seq = hypercube_sequence(d)
            if seq.graph.edges != graph.edges:
                raise InvalidParameterError(f"hypercube construction needs a hypercube graph, got {graph.name!r}")
        else:
            seq = laplacian_factor_sequence(graph, order=s["order"])
    if s["approximation"] == "truncate":
        seq = truncate_sequence(seq, int(s["tau_prime"]))
    elif s["approximation"] == "perturb":
        seq = perturb_sequence(seq, float(s["target_eps"]), int(s["perturb_seed"]))
    return seq


def build_problem(cfg: ExperimentConfig, K: int | None = None) -> Problem:
    pc = cfg.problem
    if pc.get("dir"):
        p = load_problem(pc["dir"])
    else:
        size = pc["K"] if pc["K"] is not None else (K if K is not None else EXPERIMENT_DEFAULTS["K"])
        p = generate_logistic(int(size), int(pc["N"]), int(pc["M"]), float(pc["rho"]),
                              float(pc["heterogeneity"]), seed=pc["seed"])
    if K is not None and p.K != K:
        raise InvalidParameterError(f"problem has K={p.K} but the graph has K={K}")
    return p


@dataclass
class Admissibility:
    thm1: bool
    thm2: bool
    thm1_reason: str | None
    thm2_reason: str | None

    def to_dict(self) -> dict:
        return {"thm1": self.thm1, "thm2": self.thm2, "thm1_reason": self.thm1_reason, "thm2_reason": self.thm2_reason}


def admissibility(bp: BoundParams, x0_sq: float = 0.0, w0_sq: float = 0.0) -> Admissibility:
    """Whether each bound applies to ``bp``, with the evaluator's refusal message when not."""
    reasons = []
    for probe in (lambda: thm1_bound(bp, 0, x0_sq), lambda: thm2_bound(bp, 0, w0_sq, x0_sq)):
        try:
            probe()
            reasons.append(None)
        except AdmissibilityError as exc:
            reasons.append(str(exc))
    return Admissibility(reasons[0] is None, reasons[1] is None, reasons[0], reasons[1])


def _replicate(job):
    p, seq, rc, mode, w_opt, bounds = job
    try:
        return ("ok", run(p, seq, rc, mode=mode, w_opt=w_opt, bounds=bounds), None)
    except DivergenceError as exc:
        return ("diverged", exc.partial_trace, exc.iteration)


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class BatchResult:
    summary: dict
    traces: list
    mean: Trace | None
    diverged: bool


def run_batch(cfg: ExperimentConfig, out_dir=None, seq: MatrixSeq | None = None,
              problem: Problem | None = None) -> BatchResult:
    """Run ``replications`` seeded runs; replication ``r`` uses seed ``run.seed + r``.

    With ``out_dir`` set, writes ``seed_<s>.csv`` per replication,
    ``mean.csv`` and ``summary.json``.  Divergent replications leave
    ``seed_<s>.partial.csv`` and mark the summary.
    """
    seq = build_sequence(cfg) if seq is None else seq
    p = build_problem(cfg, seq.K) if problem is None else problem
    mode = cfg.run["mode"]
    w_opt = solve_centralized(p, tol=1e-10).w
    rc0 = cfg.run_config(0)
    bp = estimate_constants(p, w_opt, rc0.mu, seq, stochastic=rc0.stochastic)
    w0 = initial_models(p, rc0)
    s0 = init_state(p, rc0.mu, mode, w0)
    verdict = admissibility(bp, consensus_error(s0), centroid_error(s0, w_opt))
    bounds = bp if cfg.run["bounds"] else None

    reps = int(cfg.run["replications"])
    jobs = [(p, seq, cfg.run_config(r), mode, w_opt, bounds) for r in range(reps)]
    results = _map(_replicate, jobs, int(cfg.jobs))

    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    traces, diverged_at = [], {}
    for r, (status, trace, it) in enumerate(results):
        seed = int(cfg.run["seed"]) + r
        if status == "ok":
            traces.append(trace)
            if out is not None:
                trace.write_csv(out / f"seed_{seed}.csv")
        else:
            diverged_at[seed] = it
            if out is not None and trace is not None:
                trace.write_csv(out / f"seed_{seed}.partial.csv")

    mean = None
    summary = {
        "replications": reps,
        "seeds": [int(cfg.run["seed"]) + r for r in range(reps)],
        "mode": mode,
        "mu": rc0.mu,
        "tau": seq.tau,
        "eps_tau": seq.eps_tau,
        "diverged": bool(diverged_at),
        "divergence_iterations": {str(k): v for k, v in diverged_at.items()},
        "bound_params": bp.to_dict(),
        "stepsize_limits": stepsize_limits(bp)._asdict(),
        "admissibility": verdict.to_dict(),
        "steady_state_window": None,
        "steady_state_msd": None,
        "final": None,
        "config": cfg.to_dict(),
    }
    if not diverged_at:
        mean = mean_trace(traces)
        window = max(1, int(len(mean) * STEADY_STATE_FRACTION))
        last = mean.rows[-1]
        summary["steady_state_window"] = window
        summary["steady_state_msd"] = steady_state_msd(mean, window)
        summary["final"] = {"iter": last.iter, "consensus_err": last.consensus_err,
                            "centroid_err": last.centroid_err, "msd": last.msd}
        if out is not None:
            mean.write_csv(out / "mean.csv")
    if out is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return BatchResult(summary, traces, mean, bool(diverged_at))


def iterations_to_threshold(p: Problem, seq: MatrixSeq, mu: float, w_opt, threshold: float,
                            max_iters: int, mode: str = "original", stochastic: bool = False,
                            seed: int = 0, w0=None) -> int | None:
    """First iteration at which the centroid error is ``<= threshold``; None if never (or divergent)."""
    rc = RunConfig(mu, max_iters, stochastic=stochastic, seed=seed)
    rng = np.random.default_rng(seed)
    state = init_state(p, mu, mode, w0)
    stepper = STEPPERS[mode]
    if centroid_error(state, w_opt) <= threshold:
        return 0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iters):
            try:
                state = stepper(state, seq, p, rc, rng)
            except DivergenceError:
                return None
            err = centroid_error(state, w_opt)
            if not math.isfinite(err):
                return None
            if err <= threshold:
                return state.iter
    return None


def tune_mu(p: Problem, seq: MatrixSeq, grid, w_opt, threshold=1e-6, max_iters=20000,
            mode="original", stochastic=False, seed=0, w0=None) -> tuple[float | None, int | None, list]:
    """Pick the step size reaching ``threshold`` in the fewest iterations; ties go to the smaller ``mu``.

    Returns ``(best_mu, iterations, table)``; ``best_mu`` is None when no
    grid value reaches the threshold within ``max_iters``.
    """
    table = []
    for mu in sorted(float(m) for m in grid):
        table.append((mu, iterations_to_threshold(p, seq, mu, w_opt, threshold, max_iters,
                                                  mode, stochastic, seed, w0)))
    hits = [(it, mu) for mu, it in table if it is not None]
    if not hits:
        return None, None, table
    it, mu = min(hits)
    return mu, it, table


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_sweep(cfg: ExperimentConfig, out_dir=None) -> tuple[list[dict], dict]:
    """One batch per sweep value; returns the ``sweep.csv`` rows and the per-value summaries.

    ``eps_tau`` perturbs the configured base sequence (0 keeps it exact),
    ``mu`` overrides the step size, and ``tau`` takes one graph per value
    from ``sweep.graphs`` and grid-searches ``mu`` per graph.
    """
    sw = cfg.sweep
    var, values = sw["variable"], list(sw["values"])
    out = None if out_dir is None else Path(out_dir)
    rows, summaries = [], {}

    if var == "tau":
        values = [int(v) for v in values]
        graphs = sw["graphs"]
        if not graphs or len(graphs) != len(values):
            raise InvalidParameterError("a tau sweep needs sweep.graphs with one graph per value")
    base_seq = None
    if var in ("eps_tau", "mu"):
        base = cfg.with_changes(sequence={"approximation": "none"}) if var == "eps_tau" else cfg
        base_seq = build_sequence(base)
    problem = None

    for idx, value in enumerate(values):
        sub_cfg, iters = cfg, None
        if var == "eps_tau":
            target = float(value)
            seq = base_seq if target == base_seq.eps_tau else perturb_sequence(
                base_seq, target, int(cfg.sequence["perturb_seed"]))
        elif var == "mu":
            seq = base_seq
            sub_cfg = cfg.with_changes(run={"mu": float(value)})
        else:
            graph = parse_topology(graphs[idx])
            seq = build_sequence(cfg, graph)
            if seq.tau != int(value):
                raise InvalidParameterError(f"graph {graphs[idx]!r} gives tau={seq.tau}, expected {value}")
        if problem is None or problem.K != seq.K:
            problem = build_problem(cfg, seq.K)
        if var == "tau":
            w_opt = solve_centralized(problem, tol=1e-10).w
            rc0 = cfg.run_config(0)
            mu, iters, _ = tune_mu(problem, seq, sw["mu_grid"], w_opt, float(sw["threshold"]),
                                   int(sw["max_iters"]), cfg.run["mode"], rc0.stochastic,
                                   rc0.seed, initial_models(problem, rc0))
            if mu is None:
                raise DivergenceError(f"no step size in the grid reaches the threshold for tau={value}")
            sub_cfg = cfg.with_changes(run={"mu": mu})
        sub_out = None if out is None else out / f"value_{idx}"
        res = run_batch(sub_cfg, sub_out, seq=seq, problem=problem)
        summaries[str(value)] = res.summary
        rows.append({
            "value": value,
            "mu": res.summary["mu"],
            "steady_state_msd": res.summary["steady_state_msd"],
            "final_consensus_err": None if res.summary["final"] is None else res.summary["final"]["consensus_err"],
            "iters_to_threshold": iters,
        })
        if res.diverged:
            if out is not None:
                write_sweep_csv(rows, out / "sweep.csv", var)
            raise DivergenceError(f"replications diverged at {var}={value}")
    if out is not None:
        write_sweep_csv(rows, out / "sweep.csv", var)
    return rows, summaries


def write_sweep_csv(rows, path, variable: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps({"variable": variable}) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != SWEEP_COLUMNS:
        raise InvalidInputError(f"unexpected sweep columns {reader.fieldnames}")
    out = []
    for rec in reader:
        row = {}
        for k, v in rec.items():
            if v == "":
                row[k] = None
            elif k == "iters_to_threshold":
                row[k] = int(v)
            else:
                row[k] = float(v)
        out.append(row)
    return out


def bound_curves(bp: BoundParams, num_iters: int, x0_sq: float, w0_sq: float) -> tuple[list, Admissibility]:
    """Rows ``(iter, thm1, thm2)`` for ``0..num_iters``; a column is None where its bound does not apply."""
    verdict = admissibility(bp, x0_sq, w0_sq)
    rows = []
    for i in range(num_iters + 1):
        b1 = thm1_bound(bp, i, x0_sq) if verdict.thm1 else None
        b2 = thm2_bound(bp, i // bp.tau, w0_sq, x0_sq) if verdict.thm2 and i % bp.tau == 0 else None
        rows.append((i, b1, b2))
    return rows, verdict
