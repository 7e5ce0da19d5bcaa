"""Finite-time consensus (FTC) matrix sequences.

A sequence ``A_1 .. A_tau`` is exact when ``A_tau @ ... @ A_1 == J`` with
``J = 11^T / K``.  Approximate sequences are measured by
``eps_tau = ||A_tau ... A_1 - J||_2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, InvalidInputError, InvalidParameterError
from .graphs import Graph, as_matrix, build_topology, laplacian, read_matrix, write_matrix

STOCHASTIC_TOL = 1e-10
SPECTRAL_RADIUS_TOL = 1e-10
SYMMETRY_TOL = 1e-10
EIG_MERGE_RTOL = 1e-8
MAX_HYPERCUBE_DIM = 8
MAX_BISECTION_ITERS = 60


@dataclass(frozen=True)
class MatrixFlags:
    symmetric: bool
    nonnegative: bool
    doubly_stochastic: bool
    spectral_radius_ok: bool
    primitive_skipped: bool = True

    @property
    def assumption4(self) -> bool:
        return self.nonnegative and self.doubly_stochastic and self.spectral_radius_ok


@dataclass(frozen=True)
class ComplianceReport:
    """Per-matrix checks of the combination-matrix requirements.

    Primitivity is never tested: single FTC factors are usually reducible
    (each hypercube factor is block diagonal), so ``primitive_skipped`` is
    always set.
    """

    matrices: tuple[MatrixFlags, ...]

    @property
    def overall_assumption4(self) -> bool:
        return all(f.assumption4 for f in self.matrices)

    def to_dict(self) -> dict:
        return {
            "overall_assumption4": self.overall_assumption4,
            "matrices": [
                {
                    "symmetric": f.symmetric,
                    "nonnegative": f.nonnegative,
                    "doubly_stochastic": f.doubly_stochastic,
                    "spectral_radius_ok": f.spectral_radius_ok,
                    "primitive_skipped": f.primitive_skipped,
                }
                for f in self.matrices
            ],
        }


def _matrix_flags(a: np.ndarray) -> MatrixFlags:
    ones = np.ones(a.shape[0])
    ds = bool(
        np.max(np.abs(a @ ones - 1)) <= STOCHASTIC_TOL and np.max(np.abs(ones @ a - 1)) <= STOCHASTIC_TOL
    )
    radius = float(np.max(np.abs(np.linalg.eigvals(a))))
    return MatrixFlags(
        symmetric=bool(np.max(np.abs(a - a.T)) <= SYMMETRY_TOL),
        nonnegative=bool(np.min(a) >= 0.0),
        doubly_stochastic=ds,
        spectral_radius_ok=radius <= 1.0 + SPECTRAL_RADIUS_TOL,
    )


def check_assumption4(seq) -> ComplianceReport:
    """Compliance flags for each matrix of a sequence (or a bare list of matrices)."""
    mats = seq.matrices if isinstance(seq, MatrixSeq) else [as_matrix(m) for m in seq]
    return ComplianceReport(tuple(_matrix_flags(m) for m in mats))


def sequence_product(matrices) -> np.ndarray:
    """``A_tau @ ... @ A_1`` for matrices given in application order."""
    prod = np.eye(matrices[0].shape[0])
    for a in matrices:
        prod = a @ prod
    return prod


def _stack(matrices) -> list[np.ndarray]:
    if len(matrices) == 0:
        raise InvalidInputError("a sequence needs at least one matrix")
    mats = [as_matrix(m) for m in matrices]
    K = mats[0].shape[0]
    for j, m in enumerate(mats):
        if m.shape != (K, K):
            raise InvalidInputError(f"matrix {j + 1} has shape {m.shape}, expected {(K, K)}")
    return mats


def epsilon_tau(seq) -> float:
    """Spectral norm of the product's deviation from exact averaging."""
    mats = _stack(seq.matrices if isinstance(seq, MatrixSeq) else seq)
    K = mats[0].shape[0]
    residual = sequence_product(mats) - np.full((K, K), 1.0 / K)
    return float(np.linalg.norm(residual, 2))


def contraction_norm(seq) -> float:
    """``||(I_hat A_tau) ... (I_hat A_1)||_2`` with ``I_hat = I - 11^T/K``."""
    mats = _stack(seq.matrices if isinstance(seq, MatrixSeq) else seq)
    K = mats[0].shape[0]
    centering = np.eye(K) - np.full((K, K), 1.0 / K)
    return float(np.linalg.norm(sequence_product([centering @ a for a in mats]), 2))


@dataclass(frozen=True)
class MatrixSeq:
    """Validated, immutable FTC sequence over a graph.

    Build with :meth:`from_matrices`, which enforces sparsity and double
    stochasticity and caches ``eps_tau`` and the compliance report.
    """

    graph: Graph
    matrices: tuple
    eps_tau: float
    compliance: ComplianceReport = field(compare=False)

    @property
    def tau(self) -> int:
        return len(self.matrices)

    @property
    def K(self) -> int:
        return self.graph.K

    @classmethod
    def from_matrices(cls, graph: Graph, matrices) -> "MatrixSeq":
        mats = [m.copy() for m in _stack(matrices)]
        if mats[0].shape[0] != graph.K:
            raise InvalidInputError(f"matrices are {mats[0].shape[0]}x{mats[0].shape[0]} but graph has K={graph.K}")
        off_support = ~graph.support()
        ones = np.ones(graph.K)
        for j, m in enumerate(mats, start=1):
            if np.any(m[off_support] != 0.0):
                raise InvalidInputError(f"A_{j} has nonzero weight outside the graph's edges")
            if np.max(np.abs(m @ ones - 1)) > STOCHASTIC_TOL or np.max(np.abs(ones @ m - 1)) > STOCHASTIC_TOL:
                raise InvalidInputError(f"A_{j} is not doubly stochastic")
            m.setflags(write=False)
        return cls(graph, tuple(mats), epsilon_tau(mats), check_assumption4(mats))

    def product(self) -> np.ndarray:
        return sequence_product(self.matrices)

    def meta(self) -> dict:
        return {
            "tau": self.tau,
            "K": self.K,
            "eps_tau": self.eps_tau,
            "graph": self.graph.to_dict(),
            "compliance": self.compliance.to_dict(),
        }


def hypercube_sequence(d: int) -> MatrixSeq:
    """Exact FTC sequence on the ``d``-cube: ``A_j = (I + P_j) / 2``.

    ``P_j`` swaps every vertex with its neighbour across bit ``j - 1``.
    """
    d = int(d)
    if not 1 <= d <= MAX_HYPERCUBE_DIM:
        raise InvalidParameterError(f"hypercube dimension must be in [1, {MAX_HYPERCUBE_DIM}], got {d}")
    g = build_topology("hypercube", d)
    K = g.K
    idx = np.arange(K)
    mats = []
    for bit in range(d):
        a = 0.5 * np.eye(K)
        a[idx, idx ^ (1 << bit)] = 0.5
        mats.append(a)
    return MatrixSeq.from_matrices(g, mats)


def distinct_laplacian_eigenvalues(g: Graph) -> np.ndarray:
    """Distinct nonzero Laplacian eigenvalues, descending, merged at 1e-8 relative."""
    vals = np.sort(np.linalg.eigvalsh(laplacian(g)))[::-1]
    scale = max(1.0, vals[0])
    nonzero = vals[vals > EIG_MERGE_RTOL * scale]
    groups: list[list[float]] = []
    for v in nonzero:
        if groups and groups[-1][-1] - v <= EIG_MERGE_RTOL * groups[-1][-1]:
            groups[-1].append(v)
        else:
            groups.append([v])
    return np.array([np.mean(gr) for gr in groups])


FACTOR_ORDERS = ("leja", "descending", "ascending")


def leja_order(values) -> np.ndarray:
    """Greedy Leja ordering: start at the largest value, then repeatedly take
    the value farthest (in product of distances) from those already chosen.
    Ties go to the smaller value.

    Interleaving large and small eigenvalues keeps every partial product of
    Laplacian factors well conditioned.
    """
    remaining = [float(v) for v in values]
    if not remaining:
        return np.array([])
    chosen = [max(remaining)]
    remaining.remove(chosen[0])
    while remaining:
        # log-sum avoids overflow of long distance products
        score = np.array([np.sum(np.log(np.abs(v - np.array(chosen)))) for v in remaining])
        # symmetric spectra produce exact ties; take the smallest tied value
        tied = np.flatnonzero(score >= score.max() - 1e-9 * max(1.0, abs(score.max())))
        pick = min(tied, key=lambda t: remaining[t])
        chosen.append(remaining.pop(int(pick)))
    return np.array(chosen)


def laplacian_factor_sequence(g: Graph, order: str = "leja") -> MatrixSeq:
    """FTC sequence ``A_j = I - L / lambda_j`` over the distinct nonzero Laplacian eigenvalues.

    The factors commute, so ``order`` does not change the product, but it
    does change the intermediate products a running algorithm sees.  The
    default Leja order keeps those bounded; ``descending`` can amplify
    disagreement by several orders of magnitude mid-cycle on long paths.

    Factors may have negative entries or spectral radius above one; they
    are built anyway and the compliance report records the violation.
    """
    if order not in FACTOR_ORDERS:
        raise InvalidParameterError(f"order must be one of {FACTOR_ORDERS}, got {order!r}")
    if not g.is_connected():
        raise InvalidInputError(f"graph {g.name!r} is not connected")
    if g.K == 1:
        return MatrixSeq.from_matrices(g, [np.eye(1)])
    lams = distinct_laplacian_eigenvalues(g)
    if order == "leja":
        lams = leja_order(lams)
    elif order == "ascending":
        lams = lams[::-1]
    L = laplacian(g)
    eye = np.eye(g.K)
    return MatrixSeq.from_matrices(g, [eye - L / lam for lam in lams])


def truncate_sequence(seq: MatrixSeq, tau_prime: int) -> MatrixSeq:
    tau_prime = int(tau_prime)
    if not 1 <= tau_prime <= seq.tau:
        raise InvalidParameterError(f"tau_prime must be in [1, {seq.tau}], got {tau_prime}")
    return MatrixSeq.from_matrices(seq.graph, [m.copy() for m in seq.matrices[:tau_prime]])


def _edge_laplacian(K: int, edges, weights) -> np.ndarray:
    L = np.zeros((K, K))
    for (i, j), w in zip(edges, weights):
        L[i, j] -= w
        L[j, i] -= w
        L[i, i] += w
        L[j, j] += w
    return L


def perturb_sequence(seq: MatrixSeq, target_eps: float, seed: int) -> MatrixSeq:
    """Push a sequence to a prescribed ``eps_tau`` with edge-supported noise.

    Each factor becomes ``A_j + s * L(c_j)`` where ``L(c_j)`` is a weighted
    Laplacian on the edges that ``A_j`` already uses (all graph edges if it
    uses none) with i.i.d. uniform[-1, 1) weights ``c_j``.  Symmetry,
    double stochasticity and the sparsity pattern are preserved exactly,
    and weight only moves between an active edge and its endpoints'
    diagonals, so nonnegative factors stay nonnegative for moderate ``s``.
    The scale ``s`` is found by bisection to within 1% of the target.
    """
    target_eps = float(target_eps)
    if target_eps < seq.eps_tau:
        raise InvalidParameterError(f"target_eps {target_eps} is below the current eps_tau {seq.eps_tau}")
    for m in seq.matrices:
        if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
            raise InvalidInputError("perturb_sequence needs symmetric matrices")
    if target_eps == seq.eps_tau or not seq.graph.edges:
        if target_eps != seq.eps_tau:
            raise ConvergenceError("graph without edges admits no perturbation")
        return MatrixSeq.from_matrices(seq.graph, [m.copy() for m in seq.matrices])

    rng = np.random.default_rng(seed)
    all_edges = seq.graph.sorted_edges()
    directions = []
    for m in seq.matrices:
        edges = [e for e in all_edges if m[e] != 0.0] or all_edges
        directions.append(_edge_laplacian(seq.K, edges, rng.uniform(-1.0, 1.0, len(edges))))

    def perturbed(scale):
        return [m + scale * e for m, e in zip(seq.matrices, directions)]

    def gap(scale):
        return epsilon_tau(perturbed(scale)) - target_eps

    lo, hi = 0.0, 1e-3
    for _ in range(MAX_BISECTION_ITERS):
        if gap(hi) >= 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise ConvergenceError(f"could not bracket eps_tau = {target_eps}")

    for _ in range(MAX_BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        g = gap(mid)
        if abs(g) <= 0.01 * target_eps:
            return _clean(seq.graph, perturbed(mid))
        if g < 0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not reach eps_tau = {target_eps} in {MAX_BISECTION_ITERS} steps")


def _clean(graph: Graph, mats) -> MatrixSeq:
    # Symmetrize and zero the off-support entries so round-off never leaks
    # weight onto non-edges.
    support = graph.support()
    out = []
    for m in mats:
        m = 0.5 * (m + m.T)
        m[~support] = 0.0
        out.append(m)
    return MatrixSeq.from_matrices(graph, out)


def save_sequence(seq: MatrixSeq, directory) -> Path:
    """Write ``meta.json`` plus ``A_1.mtx .. A_tau.mtx`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps(seq.meta(), indent=2) + "\n")
    for j, m in enumerate(seq.matrices, start=1):
        write_matrix(m, out / f"A_{j}.mtx")
    return out


def load_sequence(directory) -> MatrixSeq:
    """Read a sequence directory and re-validate every invariant."""
    src = Path(directory)
    try:
        meta = json.loads((src / "meta.json").read_text())
        graph = Graph.from_dict(meta["graph"])
        mats = [read_matrix(src / f"A_{j}.mtx") for j in range(1, int(meta["tau"]) + 1)]
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"cannot read sequence from {src}: {exc}") from exc
    seq = MatrixSeq.from_matrices(graph, mats)
    if int(meta["K"]) != seq.K:
        raise InvalidInputError(f"meta K={meta['K']} disagrees with matrices (K={seq.K})")
    if abs(float(meta["eps_tau"]) - seq.eps_tau) > 1e-12:
        raise InvalidInputError(f"meta eps_tau={meta['eps_tau']} disagrees with recomputed {seq.eps_tau}")
    return seq
