"""Parameter choices for DESTRESS and the step-size condition that guarantees convergence."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import BadAlpha

__all__ = ["Hyperparams", "derive_hyperparams", "validate_step_size", "step_size_bound"]


@dataclass(frozen=True)
class Hyperparams:
    eta: float
    s_inner: int
    batch: int
    k_in: int = 1
    k_out: int = 1
    accelerated: bool = False
    t_outer: int | None = None

    def __post_init__(self) -> None:
        if not self.eta >= 0:
            raise ValueError(f"step size must be nonnegative, got {self.eta}")
        for name in ("s_inner", "batch", "k_in", "k_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.t_outer is not None and self.t_outer < 0:
            raise ValueError("t_outer must be nonnegative")

    def with_(self, **changes) -> "Hyperparams":
        return replace(self, **changes)

    def comm_per_outer(self) -> int:
        return self.s_inner * self.k_in + self.k_out


def derive_hyperparams(m: int, n: int, alpha: float, smoothness: float) -> Hyperparams:
    """Parameter choices that give the optimal per-agent IFO complexity.

    ``S = ceil(sqrt(m n))``, ``b = ceil(sqrt(m / n))``,
    ``K_out = ceil(log(sqrt(n b) + 1) / sqrt(1 - alpha))``,
    ``K_in = ceil(log 2 / sqrt(1 - alpha))`` and ``eta = 1 / (160 L)``, with
    Chebyshev-accelerated mixing. ``T`` is left to the caller.
    """
    if m < 1 or n < 1:
        raise ValueError(f"need m, n >= 1, got m={m}, n={n}")
    if not (0.0 <= alpha < 1.0):
        raise BadAlpha(f"mixing rate must lie in [0, 1), got {alpha}")
    if smoothness <= 0:
        raise ValueError(f"smoothness must be positive, got {smoothness}")
    s = math.ceil(math.sqrt(m * n))
    b = math.ceil(math.sqrt(m / n))
    root_gap = math.sqrt(1.0 - alpha)
    k_out = math.ceil(math.log(math.sqrt(n * b) + 1.0) / root_gap)
    k_in = math.ceil(math.log(2.0) / root_gap)
    return Hyperparams(eta=1.0 / (160.0 * smoothness), s_inner=s, batch=b,
                       k_in=max(k_in, 1), k_out=max(k_out, 1), accelerated=True)


def step_size_bound(h: Hyperparams, alpha: float, smoothness: float, n: int) -> float:
    """Largest step size allowed by the convergence theorem, using
    ``alpha_in = alpha**K_in`` and ``alpha_out = alpha**K_out``."""
    a_in = alpha**h.k_in
    a_out = alpha**h.k_out
    nb = n * h.batch
    first = ((1.0 - a_in) * (1.0 - a_out)
             / (10.0 * (1.0 + a_in * a_out * math.sqrt(nb)) * (math.sqrt(h.s_inner / nb) + 1.0)))
    second = math.inf if a_in == 0.0 else (1.0 - a_in) ** 3 / (10.0 * a_in)
    third = (math.inf if a_in * a_out == 0.0
             else (1.0 - a_in) ** 1.5 * (1.0 - a_out) / (4.0 * math.sqrt(6.0) * a_in * a_out))
    return min(first, second, third) / smoothness


def validate_step_size(h: Hyperparams, alpha: float, smoothness: float, n: int) -> bool:
    return h.eta <= step_size_bound(h, alpha, smoothness, n)
