"""Aug-DGM gradient tracking driven by a cyclic FTC sequence.

Two equivalent steppers are provided.  ``step_original`` runs

    W+ = A_i (W - G)
    G+ = A_i (G + mu grad(W+) - mu grad(W))

and ``step_transformed`` runs the recursion for ``Y = G - mu A_i grad(W)``

    W+ = A_i W - A_i Y - mu A_i A_{i-1} grad(W)
    Y+ = A_i Y - mu A_i (I - A_{i-1}) grad(W)

with ``A_0 = I``.  Row ``k`` of every block belongs to agent ``k``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import AdmissibilityError, DivergenceError, InvalidInputError, InvalidParameterError
from .ftc import MatrixSeq
from .metrics import (
    Trace,
    TraceRow,
    centroid_error,
    consensus_error,
    mean_square_deviation,
    thm1_bound,
    thm2_bound,
)
from .problems import BoundParams, Problem, draw_samples, full_gradients, sample_gradients, solve_centralized

MODES = ("original", "transformed")


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Stacked network quantities after ``iter`` iterations.

    Both steppers keep ``G`` and ``Y`` consistent (``Y = G - mu A_iter
    prev_grad``), so the consensus error is available in either mode.
    ``prev_grad`` caches the gradient estimates at ``W``.
    """

    W: np.ndarray
    G: np.ndarray
    Y: np.ndarray
    prev_grad: np.ndarray
    iter: int
    mode: str


@dataclass(frozen=True)
class RunConfig:
    mu: float
    num_iters: int
    stochastic: bool = False
    seed: int = 0
    record_every: int = 1
    # Per-agent random initial models; 0 starts every agent at w = 0.
    init_scale: float = 0.0
    init_seed: int = 0

    def __post_init__(self):
        if self.mu < 0:
            raise InvalidParameterError(f"mu must be nonnegative, got {self.mu}")
        if self.num_iters < 0:
            raise InvalidParameterError(f"num_iters must be >= 0, got {self.num_iters}")
        if self.record_every < 1:
            raise InvalidParameterError(f"record_every must be >= 1, got {self.record_every}")

    def to_dict(self) -> dict:
        return asdict(self)


def cycle_matrix(seq: MatrixSeq, i: int) -> np.ndarray:
    """Matrix used at iteration ``i >= 1``: ``A_{((i - 1) mod tau) + 1}``."""
    if i < 1:
        raise InvalidParameterError(f"iteration index must be >= 1, got {i}")
    return seq.matrices[(i - 1) % seq.tau]


def _previous_matrix(seq: MatrixSeq, i: int) -> np.ndarray:
    return np.eye(seq.K) if i <= 1 else cycle_matrix(seq, i - 1)


def initial_models(p: Problem, cfg: RunConfig | None = None) -> np.ndarray:
    if cfg is None or cfg.init_scale == 0:
        return np.zeros((p.K, p.M))
    return cfg.init_scale * np.random.default_rng(cfg.init_seed).standard_normal((p.K, p.M))


def init_state(p: Problem, mu: float, mode: str = "original", w0=None) -> NetworkState:
    """Starting state with ``G_0 = mu grad(W_0)`` and ``Y_0 = 0``.

    The initial gradients are exact (no sampling) in both modes.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"mode must be one of {MODES}, got {mode!r}")
    W = np.zeros((p.K, p.M)) if w0 is None else np.array(w0, dtype=float)
    if W.shape != (p.K, p.M):
        raise InvalidInputError(f"initial models must have shape {(p.K, p.M)}, got {W.shape}")
    grad = full_gradients(p, W)
    return NetworkState(W=W, G=mu * grad, Y=np.zeros_like(W), prev_grad=grad, iter=0, mode=mode)


def _gradient_estimate(p: Problem, W: np.ndarray, cfg: RunConfig, rng) -> np.ndarray:
    if cfg.stochastic:
        return sample_gradients(p, W, draw_samples(p, rng))
    return full_gradients(p, W)


def _check_finite(i: int, *blocks) -> None:
    for b in blocks:
        if not np.all(np.isfinite(b)):
            raise DivergenceError(f"non-finite values at iteration {i}", iteration=i)


def step_original(s: NetworkState, seq: MatrixSeq, p: Problem, cfg: RunConfig, rng) -> NetworkState:
    i = s.iter + 1
    A = cycle_matrix(seq, i)
    mu = cfg.mu
    W = A @ (s.W - s.G)
    grad = _gradient_estimate(p, W, cfg, rng)
    G = A @ (s.G + mu * grad - mu * s.prev_grad)
    Y = G - mu * (A @ grad)
    _check_finite(i, W, G)
    return NetworkState(W=W, G=G, Y=Y, prev_grad=grad, iter=i, mode="original")


def step_transformed(s: NetworkState, seq: MatrixSeq, p: Problem, cfg: RunConfig, rng) -> NetworkState:
    i = s.iter + 1
    A = cycle_matrix(seq, i)
    mixed_prev = _previous_matrix(seq, i) @ s.prev_grad
    mu = cfg.mu
    W = A @ s.W - A @ s.Y - mu * (A @ mixed_prev)
    Y = A @ s.Y - mu * (A @ (s.prev_grad - mixed_prev))
    grad = _gradient_estimate(p, W, cfg, rng)
    G = Y + mu * (A @ grad)
    _check_finite(i, W, Y)
    return NetworkState(W=W, G=G, Y=Y, prev_grad=grad, iter=i, mode="transformed")


STEPPERS = {"original": step_original, "transformed": step_transformed}


def _row(s: NetworkState, w_opt, bp: BoundParams | None, x0_sq: float, w0_sq: float, tau: int) -> TraceRow:
    b1 = b2 = None
    if bp is not None:
        try:
            b1 = thm1_bound(bp, s.iter, x0_sq)
        except AdmissibilityError:
            pass
        if s.iter % tau == 0:
            try:
                b2 = thm2_bound(bp, s.iter // tau, w0_sq, x0_sq)
            except AdmissibilityError:
                pass
    return TraceRow(s.iter, consensus_error(s), centroid_error(s, w_opt), mean_square_deviation(s, w_opt), b1, b2)


def run(
    p: Problem,
    seq: MatrixSeq,
    cfg: RunConfig,
    mode: str = "original",
    w_opt=None,
    bounds: BoundParams | None = None,
    state: NetworkState | None = None,
    rng: np.random.Generator | None = None,
) -> Trace:
    """Iterate a stepper ``cfg.num_iters`` times, recording metrics.

    Rows are recorded at iteration 0, every ``cfg.record_every`` iterations,
    and at the final iteration.  When ``bounds`` is given, the bound
    columns are filled wherever the bounds apply.  A :class:`DivergenceError`
    carries the rows recorded so far in ``partial_trace``.  Passing
    ``state`` and ``rng`` resumes from a checkpoint.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if seq.K != p.K:
        raise InvalidInputError(f"sequence has K={seq.K} but problem has K={p.K}")
    if w_opt is None:
        w_opt = solve_centralized(p, tol=1e-10).w
    stepper = STEPPERS[mode]
    if state is None:
        state = init_state(p, cfg.mu, mode, initial_models(p, cfg))
    else:
        state = replace(state, mode=mode)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng

    x0_sq = consensus_error(state)
    w0_sq = centroid_error(state, w_opt)
    trace = Trace(
        {
            "config": cfg.to_dict(),
            "mode": mode,
            "eps_tau": seq.eps_tau,
            "tau": seq.tau,
            "seed": cfg.seed,
            "bounds": None if bounds is None else bounds.to_dict(),
        }
    )
    trace.append(_row(state, w_opt, bounds, x0_sq, w0_sq, seq.tau))
    end = state.iter + cfg.num_iters
    # Blow-up is reported through DivergenceError, not floating-point warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        while state.iter < end:
            try:
                state = stepper(state, seq, p, cfg, rng)
            except DivergenceError as exc:
                exc.partial_trace = trace
                raise
            if state.iter % cfg.record_every == 0 or state.iter == end:
                trace.append(_row(state, w_opt, bounds, x0_sq, w0_sq, seq.tau))
    trace.final_state = state
    return trace


_CHECKPOINT_MAGIC = b"FTCK"
_CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIQB")


def save_checkpoint(s: NetworkState, rng: np.random.Generator, path) -> None:
    """Versioned binary snapshot: header, four little-endian float64 blocks, RNG state as JSON."""
    K, M = s.W.shape
    rng_state = json.dumps(rng.bit_generator.state).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_CHECKPOINT_MAGIC, _CHECKPOINT_VERSION, K, M, s.iter, MODES.index(s.mode)))
        for block in (s.W, s.G, s.Y, s.prev_grad):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(rng_state)))
        fh.write(rng_state)


def load_checkpoint(path) -> tuple[NetworkState, np.random.Generator]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidInputError(f"{path} is too short to be a checkpoint")
    magic, version, K, M, it, mode = _HEADER.unpack_from(data)
    if magic != _CHECKPOINT_MAGIC or version != _CHECKPOINT_VERSION:
        raise InvalidInputError(f"{path} is not a version-{_CHECKPOINT_VERSION} checkpoint")
    off = _HEADER.size
    size = 8 * K * M
    blocks = []
    for _ in range(4):
        blocks.append(np.frombuffer(data[off : off + size], dtype="<f8").reshape(K, M).copy())
        off += size
    (n,) = struct.unpack_from("<I", data, off)
    state_doc = json.loads(data[off + 4 : off + 4 + n])
    bitgen = getattr(np.random, state_doc["bit_generator"])()
    bitgen.state = state_doc
    W, G, Y, prev = blocks
    return NetworkState(W, G, Y, prev, int(it), MODES[mode]), np.random.Generator(bitgen)
