"""Per-agent regularized logistic regression and the constants its analysis needs.

Agent ``k`` minimises

    J_k(w) = rho/2 ||w||^2 + 1/N sum_n log(1 + exp(-y_kn h_kn^T w))

and the network minimises the average ``J = (1/K) sum_k J_k``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, InvalidInputError, InvalidParameterError

EXPERIMENT_DEFAULTS = {"K": 16, "N": 15, "M": 10, "rho": 0.01}

# Sequences whose product misses J only by round-off count as exact when
# choosing between the exact and approximate bound branches.
EXACT_EPS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Problem:
    features: np.ndarray  # (K, N, M)
    labels: np.ndarray  # (K, N), entries in {-1, +1}
    rho: float
    seed: int | None = None
    heterogeneity: float = 0.0

    def __post_init__(self):
        h = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float)
        if h.ndim != 3 or min(h.shape) < 1:
            raise InvalidInputError(f"features must be a non-empty (K, N, M) array, got shape {h.shape}")
        if y.shape != h.shape[:2]:
            raise InvalidInputError(f"labels shape {y.shape} does not match features {h.shape[:2]}")
        if not np.all(np.isfinite(h)):
            raise InvalidInputError("features must be finite")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidInputError("labels must be -1 or +1")
        if not self.rho > 0:
            raise InvalidParameterError(f"rho must be positive, got {self.rho}")
        h.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", h)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "rho", float(self.rho))

    @property
    def K(self) -> int:
        return self.features.shape[0]

    @property
    def N(self) -> int:
        return self.features.shape[1]

    @property
    def M(self) -> int:
        return self.features.shape[2]

    def meta(self) -> dict:
        return {
            "K": self.K,
            "N": self.N,
            "M": self.M,
            "rho": self.rho,
            "seed": self.seed,
            "heterogeneity": self.heterogeneity,
        }


def generate_logistic(K=16, N=15, M=10, rho=0.01, heterogeneity=0.0, seed=0) -> Problem:
    """Planted logistic model with standard-normal features.

    Agent ``k`` labels its data with ``w* + heterogeneity * z_k``; with
    ``heterogeneity == 0`` every agent shares ``w*``.
    """
    for name, v in (("K", K), ("N", N), ("M", M)):
        if int(v) < 1:
            raise InvalidParameterError(f"{name} must be >= 1, got {v}")
    if heterogeneity < 0:
        raise InvalidParameterError(f"heterogeneity must be >= 0, got {heterogeneity}")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(M)
    offsets = rng.standard_normal((K, M))
    features = rng.standard_normal((K, N, M))
    truth = w_star + heterogeneity * offsets
    prob = expit(np.einsum("knm,km->kn", features, truth))
    labels = np.where(rng.random((K, N)) < prob, 1.0, -1.0)
    return Problem(features, labels, rho, seed=seed, heterogeneity=float(heterogeneity))


def _check_w(p: Problem, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (p.M,):
        raise InvalidInputError(f"expected a vector of length {p.M}, got shape {w.shape}")
    return w


def _check_agent(p: Problem, k) -> int:
    if not 0 <= int(k) < p.K:
        raise InvalidInputError(f"agent index {k} outside [0, {p.K})")
    return int(k)


def local_cost(p: Problem, k: int, w) -> float:
    k, w = _check_agent(p, k), _check_w(p, w)
    margins = p.labels[k] * (p.features[k] @ w)
    return 0.5 * p.rho * float(w @ w) + float(np.mean(np.logaddexp(0.0, -margins)))


def aggregate_cost(p: Problem, w) -> float:
    w = _check_w(p, w)
    margins = p.labels * np.einsum("knm,m->kn", p.features, w)
    return 0.5 * p.rho * float(w @ w) + float(np.mean(np.logaddexp(0.0, -margins)))


def local_gradient(p: Problem, k: int, w) -> np.ndarray:
    k, w = _check_agent(p, k), _check_w(p, w)
    h, y = p.features[k], p.labels[k]
    weights = y * expit(-y * (h @ w))
    return p.rho * w - weights @ h / p.N


def full_gradients(p: Problem, W: np.ndarray) -> np.ndarray:
    """Row ``k`` is ``grad J_k(W[k])``; ``W`` is ``(K, M)``."""
    margins = p.labels * np.einsum("knm,km->kn", p.features, W)
    weights = p.labels * expit(-margins)
    return p.rho * W - np.einsum("kn,knm->km", weights, p.features) / p.N


def sample_gradients(p: Problem, W: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Row ``k`` is the single-sample gradient of agent ``k`` at sample ``idx[k]``."""
    rows = np.arange(p.K)
    h = p.features[rows, idx]  # (K, M)
    y = p.labels[rows, idx]
    weights = y * expit(-y * np.einsum("km,km->k", h, W))
    return p.rho * W - weights[:, None] * h


def draw_samples(p: Problem, rng: np.random.Generator) -> np.ndarray:
    """One uniform sample index per agent, in agent order."""
    return rng.integers(0, p.N, size=p.K)


def stochastic_gradient(p: Problem, k: int, w, rng: np.random.Generator) -> np.ndarray:
    """Regularizer plus the loss gradient of one uniformly drawn sample."""
    k, w = _check_agent(p, k), _check_w(p, w)
    return per_sample_gradients(p, k, w)[int(rng.integers(0, p.N))]


def per_sample_gradients(p: Problem, k: int, w) -> np.ndarray:
    """``(N, M)`` array whose row ``n`` is what a draw of sample ``n`` returns."""
    h, y = p.features[k], p.labels[k]
    weights = y * expit(-y * (h @ w))
    return p.rho * w - weights[:, None] * h


class CentralizedSolution(NamedTuple):
    w: np.ndarray
    grad_norm: float
    iterations: int


def aggregate_gradient(p: Problem, w) -> np.ndarray:
    return full_gradients(p, np.broadcast_to(w, (p.K, p.M))).mean(axis=0)


def aggregate_smoothness(p: Problem) -> float:
    """Lipschitz constant of the aggregate gradient: ``rho + lambda_max(sum H^T H) / (4 K N)``."""
    h = p.features.reshape(-1, p.M)
    return p.rho + float(np.linalg.eigvalsh(h.T @ h)[-1]) / (4 * p.K * p.N)


def solve_centralized(p: Problem, tol=1e-10, w0=None, max_iters=1_000_000) -> CentralizedSolution:
    """Minimise the aggregate cost by gradient descent with Armijo backtracking.

    Backtracking never goes below ``1 / L``: near the optimum the Armijo
    test is decided by round-off in the cost, and the ``1 / L`` step still
    decreases it in exact arithmetic.
    """
    if not tol > 0:
        raise InvalidParameterError(f"tol must be positive, got {tol}")
    w = np.zeros(p.M) if w0 is None else _check_w(p, w0).copy()
    min_step = 1.0 / aggregate_smoothness(p)
    f = aggregate_cost(p, w)
    g = aggregate_gradient(p, w)
    step = min_step
    for it in range(max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return CentralizedSolution(w, gnorm, it)
        if it == max_iters:
            break
        step *= 2.0
        while True:
            w_new = w - step * g
            f_new = aggregate_cost(p, w_new)
            if f_new <= f - 1e-4 * step * gnorm**2 or step <= min_step:
                break
            step = max(0.5 * step, min_step)
        w, f, g = w_new, f_new, aggregate_gradient(p, w_new)
    raise ConvergenceError(f"gradient descent did not reach tol={tol} in {max_iters} iterations")


@dataclass(frozen=True)
class BoundParams:
    nu: float
    delta: float
    B: float
    sigma2: float
    mu: float
    tau: int
    eps_tau: float
    K: int

    def __post_init__(self):
        for name in ("nu", "delta", "B", "sigma2", "mu", "eps_tau"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be nonnegative")
        if self.nu > self.delta * (1 + 1e-12):
            raise InvalidParameterError(f"nu={self.nu} exceeds delta={self.delta}")

    def replace(self, **changes) -> "BoundParams":
        return BoundParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_constants(
    p: Problem, w_opt, mu: float, seq, stochastic=True, num_probes=50, probe_seed=0
) -> BoundParams:
    """Empirical stand-ins for the strong-convexity, smoothness, heterogeneity and noise constants.

    ``B`` is a supremum over a finite probe set (``w_opt``, 0 and
    ``num_probes`` uniform points in the ball of radius ``2 ||w_opt||``),
    not a global bound.  An ``eps_tau`` at or below ``EXACT_EPS_TOL`` is
    recorded as exactly 0.
    """
    w_opt = _check_w(p, w_opt)
    gram_top = max(np.linalg.eigvalsh(h.T @ h)[-1] for h in p.features)
    delta = p.rho + gram_top / (4 * p.N)

    rng = np.random.default_rng(probe_seed)
    radius = 2 * np.linalg.norm(w_opt)
    directions = rng.standard_normal((num_probes, p.M))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(num_probes) ** (1.0 / p.M)
    probes = [w_opt, np.zeros(p.M)] + list(directions * radii[:, None])
    B = 0.0
    for w in probes:
        grads = full_gradients(p, np.broadcast_to(w, (p.K, p.M)))
        diffs = grads[:, None, :] - grads[None, :, :]
        B = max(B, float(np.sqrt(np.max(np.sum(diffs**2, axis=-1)))))

    sigma2 = 0.0
    if stochastic:
        for k in range(p.K):
            samples = per_sample_gradients(p, k, w_opt)
            sigma2 += float(np.mean(np.sum((samples - samples.mean(axis=0)) ** 2, axis=1)))

    return BoundParams(
        nu=p.rho, delta=float(delta), B=B, sigma2=sigma2, mu=float(mu),
        tau=seq.tau, eps_tau=0.0 if seq.eps_tau <= EXACT_EPS_TOL else float(seq.eps_tau), K=p.K,
    )


def save_problem(p: Problem, directory) -> Path:
    """Write ``meta.json`` and ``features.bin`` (little-endian float64, agent-major)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = p.meta()
    meta["labels"] = p.labels.astype(int).tolist()
    (out / "meta.json").write_text(json.dumps(meta) + "\n")
    (out / "features.bin").write_bytes(p.features.astype("<f8").tobytes(order="C"))
    return out


def load_problem(directory) -> Problem:
    src = Path(directory)
    try:
        meta = json.loads((src / "meta.json").read_text())
        K, N, M = int(meta["K"]), int(meta["N"]), int(meta["M"])
        blob = (src / "features.bin").read_bytes()
    except (OSError, KeyError, ValueError) as exc:
        raise InvalidInputError(f"cannot read problem from {src}: {exc}") from exc
    if len(blob) != 8 * K * N * M:
        raise InvalidInputError(f"features.bin has {len(blob)} bytes, expected {8 * K * N * M}")
    features = np.frombuffer(blob, dtype="<f8").reshape(K, N, M)
    return Problem(features, np.array(meta["labels"], dtype=float), meta["rho"],
                   seed=meta.get("seed"), heterogeneity=float(meta.get("heterogeneity", 0.0)))
