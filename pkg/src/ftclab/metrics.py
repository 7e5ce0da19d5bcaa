"""Error functionals on network states and closed-form performance bounds."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import AdmissibilityError, DegenerateConstantsError, InvalidInputError
from .problems import BoundParams

TRACE_COLUMNS = ("iter", "consensus_err", "centroid_err", "msd", "thm1_bound", "thm2_bound")

# Constants of the centroid (MSD) bound.
BETA2, BETA3, BETA4, BETA5 = 1728, 576, 108, 24

THM1_EPS_MAX = 2.0 / 3.0
THM2_EPS_MAX = 3.0 / 5.0


def consensus_error(s) -> float:
    """``||I_hat W||_F^2 + ||I_hat Y||_F^2``: squared disagreement of models and tracking variables."""
    w_hat = s.W - s.W.mean(axis=0)
    y_hat = s.Y - s.Y.mean(axis=0)
    return float(np.sum(w_hat**2) + np.sum(y_hat**2))


def centroid_error(s, w_opt) -> float:
    diff = np.asarray(w_opt) - s.W.mean(axis=0)
    return float(diff @ diff)


def mean_square_deviation(s, w_opt) -> float:
    return float(np.mean(np.sum((s.W - np.asarray(w_opt)) ** 2, axis=1)))


def centroid_step_residual(prev, cur, mu: float) -> float:
    """Norm of the one-step centroid identity ``w_c,i = w_c,i-1 - mu * mean_k grad_k(w_k,i-1)``.

    ``prev.prev_grad`` holds exactly the gradient estimates consumed by the
    step from ``prev`` to ``cur``.
    """
    step = cur.W.mean(axis=0) - prev.W.mean(axis=0)
    return float(np.linalg.norm(step + mu * prev.prev_grad.mean(axis=0)))


class StepSizeLimits(NamedTuple):
    thm1_mu_max: float
    thm2_mu_max: float


def stepsize_limits(bp: BoundParams) -> StepSizeLimits:
    if not (bp.delta > 0 and bp.nu > 0):
        raise InvalidInputError("stepsize limits need nu > 0 and delta > 0")
    eps, tau = bp.eps_tau, bp.tau
    if eps >= 1:
        return StepSizeLimits(0.0, 0.0)
    thm1 = math.sqrt((1 - eps) / (tau * (2 * tau - 1) * (1 + eps))) / (12 * bp.delta**2)
    return StepSizeLimits(thm1, min(bp.nu / bp.delta**2, thm1))


def _contraction_factor(eps: float) -> float:
    return 0.375 * eps * (2 + 3 * eps)


def thm1_bound(bp: BoundParams, i: int, x0_sq: float) -> float:
    """Bound on the expected consensus error at iteration ``i``.

    The exact-FTC branch (``eps_tau == 0``) carries no initial-condition
    term and does not depend on ``i``.
    """
    eps, tau, mu = bp.eps_tau, bp.tau, bp.mu
    if not 0 <= eps < THM1_EPS_MAX:
        raise AdmissibilityError(f"consensus bound needs 0 <= eps_tau < 2/3, got {eps}")
    limit = stepsize_limits(bp).thm1_mu_max
    if mu > limit:
        raise AdmissibilityError(f"step size {mu} exceeds the consensus-bound limit {limit}")
    if eps == 0:
        return 27 * mu**2 * tau * (2 * tau - 1) * bp.K * bp.B**2 + 3 * mu**2 * tau * (2 * tau - 1) * bp.sigma2
    return (
        _contraction_factor(eps) ** (i // tau) * x0_sq
        + 432 * mu**2 * bp.K * tau**2 * bp.B**2 / (1 - eps) ** 2
        + 144 * mu**2 * tau**2 * bp.sigma2 / (1 - eps) ** 2
    )


def thm2_constants(bp: BoundParams) -> dict:
    """Rates and weights of the centroid bound; ``beta1`` is None when exact FTC makes it unused."""
    gamma1 = math.sqrt(1 - 2 * bp.mu * bp.nu + bp.mu**2 * bp.delta**2)
    gamma2 = _contraction_factor(bp.eps_tau) ** (1.0 / bp.tau)
    beta1 = None
    if bp.eps_tau > 0:
        if abs(gamma1 - gamma2) < 1e-12:
            raise DegenerateConstantsError(f"gamma1 == gamma2 == {gamma1}; beta1 is undefined")
        beta1 = 2 / abs(gamma1 - gamma2)
    return {
        "gamma1": gamma1,
        "gamma2": gamma2,
        "gamma3": max(gamma1, gamma2),
        "beta1": beta1,
        "beta2": BETA2,
        "beta3": BETA3,
        "beta4": BETA4,
        "beta5": BETA5,
    }


def thm2_bound(bp: BoundParams, ell: int, w0_sq: float, x0_sq: float) -> float:
    """Bound on the expected squared centroid error at iteration ``ell * tau``."""
    eps, tau, mu, nu, delta, K = bp.eps_tau, bp.tau, bp.mu, bp.nu, bp.delta, bp.K
    if not 0 <= eps < THM2_EPS_MAX:
        raise AdmissibilityError(f"centroid bound needs 0 <= eps_tau < 3/5, got {eps}")
    limit = stepsize_limits(bp).thm2_mu_max
    if mu > limit:
        raise AdmissibilityError(f"step size {mu} exceeds the centroid-bound limit {limit}")
    c = thm2_constants(bp)
    i = ell * tau
    noise = 2 * mu * bp.sigma2 / (nu * K)
    if eps == 0:
        return (
            c["gamma1"] ** i * w0_sq
            + BETA4 * mu**2 * delta**2 * tau**2 * bp.B**2 / nu**2
            + BETA5 * mu**2 * delta**2 * tau**2 * bp.sigma2 / (nu**2 * K)
            + noise
        )
    return (
        c["gamma1"] ** i * w0_sq
        + c["beta1"] * mu * delta**2 / (nu * K) * c["gamma3"] ** i * x0_sq
        + BETA2 * mu**2 * delta**2 * tau * bp.B**2 / (nu**2 * (1 - eps) ** 2)
        + BETA3 * mu**2 * delta**2 * tau**2 * bp.sigma2 / (nu**2 * K * (1 - eps) ** 2)
        + noise
    )


class TraceRow(NamedTuple):
    iter: int
    consensus_err: float
    centroid_err: float
    msd: float
    thm1_bound: float | None = None
    thm2_bound: float | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class Trace:
    """Recorded metric rows plus a JSON-serializable header (config, bounds, eps_tau, seed)."""

    header: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    final_state: object = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.rows)

    def append(self, row: TraceRow) -> None:
        if self.rows and row.iter <= self.rows[-1].iter:
            raise InvalidInputError("trace iterations must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        idx = TRACE_COLUMNS.index(name)
        return np.array([np.nan if r[idx] is None else r[idx] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.header):
            buf.write("# " + json.dumps({key: self.header[key]}, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "Trace":
        header: dict = {}
        lines = text.splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                header.update(json.loads(line[1:]))
            elif line.strip():
                body.append(line)
        reader = csv.reader(body)
        cols = next(reader, None)
        if tuple(cols or ()) != TRACE_COLUMNS:
            raise InvalidInputError(f"unexpected trace columns {cols}")
        trace = cls(header)
        for rec in reader:
            vals = [None if v == "" else float(v) for v in rec]
            trace.append(TraceRow(int(vals[0]), *vals[1:]))
        return trace

    @classmethod
    def read_csv(cls, path) -> "Trace":
        return cls.from_csv(Path(path).read_text())


def steady_state_msd(trace: Trace, window: int) -> float:
    """Mean MSD over the last ``window`` recorded rows."""
    window = int(window)
    if window < 1 or len(trace) < window:
        raise InvalidInputError(f"trace has {len(trace)} rows, window {window} is not usable")
    return float(np.mean(trace.column("msd")[-window:]))


def mean_trace(traces) -> Trace:
    """Column-wise average of traces recorded on the same iteration grid."""
    traces = list(traces)
    if not traces:
        raise InvalidInputError("need at least one trace to average")
    grid = [r.iter for r in traces[0].rows]
    for t in traces[1:]:
        if [r.iter for r in t.rows] != grid:
            raise InvalidInputError("traces were recorded on different iteration grids")
    out = Trace(dict(traces[0].header))
    out.header.pop("seed", None)
    out.header["replications"] = len(traces)
    for j, it in enumerate(grid):
        vals = []
        for c in range(1, len(TRACE_COLUMNS)):
            col = [t.rows[j][c] for t in traces]
            vals.append(None if any(v is None for v in col) else float(np.mean(col)))
        out.append(TraceRow(it, *vals))
    return out
