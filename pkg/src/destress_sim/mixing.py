"""Mixing matrices, the mixing rate, and multi-round gossip.

A mixing matrix ``W`` conforms to the graph (zero weight between
non-neighbours) and has unit row and column sums. Its mixing rate is the
operator norm of ``W - 11^T/n``; ``alpha**k`` bounds how much ``k`` rounds
of plain gossip shrink the consensus error. Entries may be negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadDimensions, NotConnected, NotStochastic, NotSymmetric, ParseError
from .topology import Graph, is_connected

__all__ = [
    "MixingMatrix",
    "MixingSchedule",
    "metropolis_weights",
    "mixing_rate",
    "gossip",
    "chebyshev_gossip",
    "mix",
    "effective_alpha",
    "load_mixing_csv",
    "write_mixing_csv",
    "consensus_error",
]

STOCHASTIC_TOL = 1e-9
SYMMETRY_TOL = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000
_POWER_START_SEED = 20_210_711


def _check_stochastic(w: np.ndarray, tol: float = STOCHASTIC_TOL) -> None:
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise BadDimensions(f"mixing matrix must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NotStochastic("mixing matrix has non-finite entries")
    rows = np.abs(w.sum(axis=1) - 1.0).max()
    cols = np.abs(w.sum(axis=0) - 1.0).max()
    if rows > tol or cols > tol:
        raise NotStochastic(f"row/column sums deviate from 1 by {max(rows, cols):.3e}")


def mixing_rate(w: np.ndarray) -> float:
    """Largest singular value of ``W - 11^T/n``.

    Power iteration on ``(W-J)^T (W-J)``, stopped once the eigen-residual
    falls below ``1e-10`` relative to the current estimate. The start vector
    is a fixed-seed Gaussian draw: deterministic, yet not confined to an
    invariant subspace the way a structured vector can be (a star's
    Metropolis matrix maps ``e_0 - 1/n`` to zero, for instance).
    """
    w = np.asarray(w, dtype=float)
    _check_stochastic(w)
    n = w.shape[0]

    def apply(v: np.ndarray) -> np.ndarray:
        y = w @ v - v.mean()
        return w.T @ y - y.mean()

    v = np.random.default_rng(_POWER_START_SEED).standard_normal(n)
    v -= v.mean()
    if not np.any(v):
        return 0.0
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(POWER_MAX_ITER):
        y = apply(v)
        norm = np.linalg.norm(y)
        if norm < 1e-28:
            # alpha below 1e-14: W is the averaging projector up to rounding
            return 0.0
        lam = float(v @ y)
        if np.linalg.norm(y - lam * v) <= POWER_TOL * max(lam, 1e-300):
            break
        v = y / norm
    return math.sqrt(max(lam, 0.0))


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Read-only mixing matrix with its cached mixing rate."""

    w: np.ndarray
    alpha: float
    construction: str = "custom"

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_dense(cls, w: np.ndarray, construction: str = "custom") -> "MixingMatrix":
        w = np.asarray(w, dtype=float)
        return cls(w=w, alpha=mixing_rate(w), construction=construction)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.abs(self.w - self.w.T).max() <= SYMMETRY_TOL)

    def conforms_to(self, g: Graph) -> bool:
        """True when every off-graph, off-diagonal weight is zero."""
        if g.n != self.n:
            return False
        mask = g.adjacency() + np.eye(self.n)
        return bool(np.all(self.w[mask == 0] == 0.0))


@dataclass(frozen=True)
class MixingSchedule:
    k_in: int = 1
    k_out: int = 1
    accelerated: bool = False

    def __post_init__(self) -> None:
        if self.k_in < 1 or self.k_out < 1:
            raise ValueError(f"mixing rounds must be >= 1, got k_in={self.k_in}, k_out={self.k_out}")


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on each edge."""
    if not is_connected(g):
        raise NotConnected("Metropolis weights need a connected graph")
    deg = g.degrees()
    w = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return MixingMatrix.from_dense(w, construction="metropolis")


def _means_kept(before: np.ndarray, after: np.ndarray) -> bool:
    if not (np.all(np.isfinite(before)) and np.all(np.isfinite(after))):
        return True  # divergence is reported by the caller, not here
    scale = 1.0 + np.abs(before).max(initial=0.0)
    return bool(np.abs(before.mean(axis=0) - after.mean(axis=0)).max() <= 1e-8 * scale)


def gossip(w: MixingMatrix, state: np.ndarray, k: int) -> np.ndarray:
    """Return ``W^k @ state`` as ``k`` successive products."""
    if state.shape[0] != w.n:
        raise BadDimensions(f"state has {state.shape[0]} rows, mixing matrix has {w.n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    y = state
    for _ in range(k):
        y = w.w @ y
    assert _means_kept(state, y), "gossip changed the agent average"
    return y


def chebyshev_gossip(w: MixingMatrix, state: np.ndarray, k: int) -> np.ndarray:
    """Apply the degree-``k`` Chebyshev consensus polynomial of ``W`` to ``state``.

    With ``c_j = T_j(1/alpha)`` the polynomial is ``T_k(W/alpha) / c_k``,
    which equals 1 at ``W = 1`` and is bounded by ``1/c_k`` on
    ``[-alpha, alpha]``. The three-term recurrence is carried in the ratios
    ``r_j = c_{j-1}/c_j`` to avoid overflow::

        y_1     = W y_0
        r_{j+1} = 1 / (2/alpha - r_j)
        y_{j+1} = (2/alpha) r_{j+1} W y_j - r_j r_{j+1} y_{j-1}

    The two coefficients sum to one at every step, so the agent average is
    preserved. Exactly ``k`` products with ``W`` are used.
    """
    if state.shape[0] != w.n:
        raise BadDimensions(f"state has {state.shape[0]} rows, mixing matrix has {w.n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not w.is_symmetric:
        raise NotSymmetric("Chebyshev acceleration needs a symmetric mixing matrix")
    alpha = w.alpha
    if alpha <= 0.0:
        # W is already the averaging projector
        return gossip(w, state, k)
    y_prev, y = state, w.w @ state
    r = alpha
    for _ in range(k - 1):
        r_next = 1.0 / (2.0 / alpha - r)
        y_prev, y = y, (2.0 / alpha) * r_next * (w.w @ y) - (r * r_next) * y_prev
        r = r_next
    assert _means_kept(state, y), "Chebyshev gossip changed the agent average"
    return y


def mix(w: MixingMatrix, state: np.ndarray, k: int, accelerated: bool = False) -> np.ndarray:
    if accelerated and k > 1:
        return chebyshev_gossip(w, state, k)
    return gossip(w, state, k)


def effective_alpha(alpha: float, k: int, accelerated: bool) -> float:
    """Contraction factor of ``k`` mixing rounds.

    Plain powering gives ``alpha**k``. The Chebyshev bound is
    ``2 c^k / (1 + c^(2k))`` with ``c = (1 - sqrt(1 - alpha^2)) / alpha``.
    """
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return 0.0
    if not accelerated:
        return alpha**k
    c = (1.0 - math.sqrt(1.0 - alpha * alpha)) / alpha
    ck = c**k
    return 2.0 * ck / (1.0 + ck * ck)


def consensus_error(state: np.ndarray) -> float:
    """Squared Frobenius distance of ``state`` to its row-average."""
    dev = state - state.mean(axis=0, keepdims=True)
    return float(np.sum(dev * dev))


def load_mixing_csv(path: str | Path, graph: Graph | None = None) -> MixingMatrix:
    """Load a dense ``n x n`` mixing matrix from comma-separated text."""
    path = Path(path)
    rows: list[list[float]] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError:
            raise ParseError(lineno, "mixing matrix entries must be real numbers") from None
    n = len(rows)
    if n == 0 or any(len(r) != n for r in rows):
        raise BadDimensions(f"{path} does not hold a square matrix")
    w = np.array(rows)
    mm = MixingMatrix.from_dense(w, construction=f"csv:{path.name}")
    if graph is not None and not mm.conforms_to(graph):
        raise BadDimensions(f"{path} has weight on pairs that are not graph edges")
    return mm


def write_mixing_csv(w: MixingMatrix, path: str | Path) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in w.w]
    Path(path).write_text("\n".join(lines) + "\n")
