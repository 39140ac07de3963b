"""DESTRESS and the DSGD / GT-SARAH baselines on a simulated network.

All agent quantities are stacked row-wise into ``(n, d)`` arrays; a mixing
step is a left product with the mixing matrix. The runs are pure
functions of (problem, matrix, hyperparameters, x0, seed): each agent
draws its mini-batches from its own stream ``SeedSequence(seed,
spawn_key=(0, i))`` and the output sampler uses ``spawn_key=(1,)``.

Counting conventions, all per agent:

``comm_rounds``
    DESTRESS: ``K_out`` per outer step plus ``K_in`` per inner step, so a
    run of ``T`` outer steps reports ``T (S K_in + K_out)``. Baselines:
    one per product with ``W``.
``comm_strict``
    Every product with ``W``. DESTRESS mixes both ``u`` and ``v`` in each
    inner step, so this is ``T (2 S K_in + K_out)``.
``ifo_strict``
    One unit per sample gradient at one point: ``m`` at start-up, then
    ``m`` per outer step (the previous local gradient is cached) and
    ``2 b`` per inner step.
``ifo_lean``
    ``m + T (S b + 2 m)``: a mini-batch difference is charged once per
    sample (``b``) and an outer step ``2 m`` (no gradient caching).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, Partition
from .errors import NonFiniteError, ShardMismatch
from .hyperparams import Hyperparams
from .mixing import MixingMatrix, mix
from .model import LossModel

__all__ = [
    "Problem",
    "NetworkState",
    "Counters",
    "StepEvent",
    "Budget",
    "RunResult",
    "GtSarahParams",
    "DsgdSchedule",
    "agent_rngs",
    "destress_run",
    "gt_sarah_run",
    "dsgd_run",
    "global_grad_norm_sq",
    "destress_counters",
]


class Problem:
    """A model plus a dataset split across ``n`` agents.

    Shard data are gathered once into ``(n, m, d_f)`` / ``(n, m)`` arrays.
    """

    def __init__(self, model: LossModel, dataset: Dataset, partition: Partition) -> None:
        if partition.shards.max() >= dataset.n_samples or partition.shards.min() < 0:
            raise ShardMismatch("partition refers to rows outside the dataset")
        if dataset.d_f != model.n_features:
            raise ShardMismatch(f"dataset has {dataset.d_f} features, model expects {model.n_features}")
        self.model = model
        self.dataset = dataset
        self.partition = partition
        self.feats = dataset.features[partition.shards]
        self.labels = dataset.labels[partition.shards]

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def m(self) -> int:
        return self.partition.m

    @property
    def dim(self) -> int:
        return self.model.dim

    def local_grads(self, xs: np.ndarray) -> np.ndarray:
        """Row ``i`` is the gradient of agent ``i``'s local objective at ``xs[i]``."""
        return self.model.group_grads(xs, self.feats, self.labels)

    def local_values(self, xs: np.ndarray) -> np.ndarray:
        return self.model.group_values(xs, self.feats, self.labels)

    def batch_grads(self, xs: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Per-agent mini-batch gradients; ``idx[i]`` indexes into shard ``i``."""
        rows = np.arange(self.n)[:, None]
        return self.model.group_grads(xs, self.feats[rows, idx], self.labels[rows, idx])

    def global_grad(self, x: np.ndarray) -> np.ndarray:
        return self.local_grads(np.broadcast_to(x, (self.n, x.size))).mean(axis=0)

    def global_loss(self, x: np.ndarray) -> float:
        return float(self.local_values(np.broadcast_to(x, (self.n, x.size))).mean())


def global_grad_norm_sq(problem: Problem, x: np.ndarray) -> float:
    """Squared norm of the gradient of the average loss over all partitioned samples.

    Diagnostic only; never counted as oracle calls.
    """
    g = problem.global_grad(np.asarray(x, dtype=float))
    return float(g @ g)


@dataclass
class NetworkState:
    x: np.ndarray
    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    prev_local_grad: np.ndarray


@dataclass
class Counters:
    comm_rounds: int = 0
    comm_strict: int = 0
    ifo_strict: int = 0
    ifo_lean: int = 0

    @property
    def ifo_per_agent(self) -> int:
        return self.ifo_strict

    def copy(self) -> "Counters":
        return Counters(self.comm_rounds, self.comm_strict, self.ifo_strict, self.ifo_lean)


@dataclass
class StepEvent:
    """Handed to the trace sink after start-up, every outer step and every inner step.

    ``iterate`` is the stacked point the algorithm currently sits at (``u``
    inside the DESTRESS inner loop, ``x`` elsewhere). Sinks must not mutate
    the arrays they receive.
    """

    phase: str  # "init" | "outer" | "inner"
    t: int
    s: int
    counters: Counters
    iterate: np.ndarray
    state: NetworkState | None = None


TraceSink = Callable[[StepEvent], None]


@dataclass(frozen=True)
class Budget:
    """Stop at the first outer-step boundary where any set bound is reached."""

    max_comm: int | None = None
    max_ifo: int | None = None
    max_outer: int | None = None

    def reached(self, c: Counters, t: int) -> bool:
        return ((self.max_comm is not None and c.comm_rounds >= self.max_comm)
                or (self.max_ifo is not None and c.ifo_strict >= self.max_ifo)
                or (self.max_outer is not None and t >= self.max_outer))

    def is_set(self) -> bool:
        return any(v is not None for v in (self.max_comm, self.max_ifo, self.max_outer))


@dataclass
class RunResult:
    output: np.ndarray
    counters: Counters
    mean_iterate: np.ndarray
    outer_steps: int
    trace: object | None = None
    output_index: tuple[int, int, int] | None = None
    pool: list[np.ndarray] | None = field(default=None, repr=False)


def agent_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, i))) for i in range(n)]


def _output_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def _draw_batches(rngs: list[np.random.Generator], m: int, b: int) -> np.ndarray:
    return np.stack([r.integers(0, m, size=b) for r in rngs])


def _check_finite(t: int, s: int, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(t, s)


def _initial_stack(problem: Problem, x0: np.ndarray | None) -> np.ndarray:
    if x0 is None:
        x0 = np.zeros(problem.dim)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.dim,):
        raise ShardMismatch(f"x0 has shape {x0.shape}, model dimension is {problem.dim}")
    return np.tile(x0, (problem.n, 1))


def _check_network(problem: Problem, w: MixingMatrix) -> None:
    if w.n != problem.n:
        raise ShardMismatch(f"{problem.n} shards but the mixing matrix is {w.n}x{w.n}")


def _outer_limit(h_t: int | None, budget: Budget | None) -> Budget:
    if budget is not None and budget.is_set():
        if h_t is not None and budget.max_outer is None:
            return Budget(budget.max_comm, budget.max_ifo, h_t)
        return budget
    if h_t is None:
        raise ValueError("give either a number of outer steps or a budget")
    return Budget(max_outer=h_t)


def destress_counters(t: int, m: int, h: Hyperparams) -> Counters:
    """Closed-form counters after ``t`` outer steps (a batch never exceeds the shard)."""
    b = min(h.batch, m)
    return Counters(
        comm_rounds=t * (h.s_inner * h.k_in + h.k_out),
        comm_strict=t * (2 * h.s_inner * h.k_in + h.k_out),
        ifo_strict=m + t * (m + 2 * h.s_inner * b),
        ifo_lean=m + t * (h.s_inner * b + 2 * m),
    )


def destress_run(
    problem: Problem,
    w: MixingMatrix,
    h: Hyperparams,
    x0: np.ndarray | None = None,
    seed: int = 0,
    trace_sink: TraceSink | None = None,
    budget: Budget | None = None,
    keep_pool: bool = False,
) -> RunResult:
    """Run DESTRESS.

    Every agent starts from ``x0`` with the tracking variable set to the
    exact global gradient there (an idealisation: no communication is
    charged for it). Each outer step refreshes local full gradients and
    applies the gradient-tracking correction with ``K_out`` mixing rounds;
    each of the ``S`` inner steps takes a mixed gradient step, then forms
    the recursive mini-batch estimate and mixes it with ``K_in`` rounds.

    When ``b >= m`` the whole shard is used as the mini-batch. The returned
    ``output`` is drawn uniformly from every inner iterate ``u_i^{(t),s-1}``
    with a reservoir sampler; ``keep_pool`` also stores the whole pool.
    """
    _check_network(problem, w)
    limit = _outer_limit(h.t_outer, budget)
    n, m, b = problem.n, problem.m, h.batch
    full_batch = b >= m
    rngs = agent_rngs(seed, n)
    out_rng = _output_rng(seed)

    def mixed(z: np.ndarray, k: int) -> np.ndarray:
        return mix(w, z, k, h.accelerated)

    c = Counters()
    x = _initial_stack(problem, x0)
    prev_grad = problem.local_grads(x)
    c.ifo_strict += m
    c.ifo_lean += m
    s_track = np.tile(prev_grad.mean(axis=0), (n, 1))
    u = x
    v = s_track
    state = NetworkState(x=x, s=s_track, u=u, v=v, prev_local_grad=prev_grad)
    if trace_sink:
        trace_sink(StepEvent("init", 0, 0, c.copy(), x, state))

    pool: list[np.ndarray] | None = [] if keep_pool else None
    chosen = x[0].copy()
    chosen_index: tuple[int, int, int] | None = None
    seen = 0
    t = 0
    while not limit.reached(c, t):
        t += 1
        x = u
        grad = problem.local_grads(x)
        s_track = mixed(s_track + grad - prev_grad, h.k_out)
        prev_grad = grad
        c.ifo_strict += m
        c.ifo_lean += 2 * m
        c.comm_rounds += h.k_out
        c.comm_strict += h.k_out
        _check_finite(t, 0, s_track, x)
        u = x
        v = s_track
        state = NetworkState(x=x, s=s_track, u=u, v=v, prev_local_grad=prev_grad)
        if trace_sink:
            trace_sink(StepEvent("outer", t, 0, c.copy(), x, state))

        for s in range(1, h.s_inner + 1):
            # output pool candidates are the pre-step iterates u^{(t),s-1}
            draws = out_rng.random(n)
            for i in range(n):
                seen += 1
                if draws[i] * seen < 1.0:
                    chosen = u[i].copy()
                    chosen_index = (t, s, i)
            if pool is not None:
                pool.extend(row.copy() for row in u)

            u_prev = u
            u = mixed(u_prev - h.eta * v, h.k_in)
            if full_batch:
                diff = problem.local_grads(u) - problem.local_grads(u_prev)
                c.ifo_strict += 2 * m
                c.ifo_lean += m
            else:
                idx = _draw_batches(rngs, m, b)
                diff = problem.batch_grads(u, idx) - problem.batch_grads(u_prev, idx)
                c.ifo_strict += 2 * b
                c.ifo_lean += b
            v = mixed(diff + v, h.k_in)
            c.comm_rounds += h.k_in
            c.comm_strict += 2 * h.k_in
            _check_finite(t, s, u, v)
            state = NetworkState(x=x, s=s_track, u=u, v=v, prev_local_grad=prev_grad)
            if trace_sink:
                trace_sink(StepEvent("inner", t, s, c.copy(), u, state))

    result = RunResult(output=chosen, counters=c, mean_iterate=u.mean(axis=0), outer_steps=t,
                       trace=getattr(trace_sink, "trace", None), output_index=chosen_index, pool=pool)
    return result


@dataclass(frozen=True)
class GtSarahParams:
    eta: float
    batch: int
    q: int
    t_outer: int | None = None

    def __post_init__(self) -> None:
        if self.batch < 1 or self.q < 1:
            raise ValueError("batch and q must be >= 1")


def gt_sarah_run(
    problem: Problem,
    w: MixingMatrix,
    h: GtSarahParams,
    x0: np.ndarray | None = None,
    seed: int = 0,
    trace_sink: TraceSink | None = None,
    budget: Budget | None = None,
) -> RunResult:
    """GT-SARAH: one mixing round for ``x`` and one for the tracker ``y`` per iteration.

    Local full gradients are refreshed whenever ``t`` is a multiple of
    ``q``; otherwise each agent forms a SARAH mini-batch correction.
    Iterations play the role of outer steps for budgeting and tracing.
    """
    _check_network(problem, w)
    limit = _outer_limit(h.t_outer, budget)
    n, m, b = problem.n, problem.m, h.batch
    rngs = agent_rngs(seed, n)
    c = Counters()
    x = _initial_stack(problem, x0)
    v = problem.local_grads(x)
    c.ifo_strict += m
    c.ifo_lean += m
    y = v
    if trace_sink:
        trace_sink(StepEvent("init", 0, 0, c.copy(), x, NetworkState(x, y, x, v, v)))
    t = 0
    while not limit.reached(c, t):
        t += 1
        x_prev = x
        x = w.w @ x_prev - h.eta * y
        if t % h.q == 0:
            v_new = problem.local_grads(x)
            c.ifo_strict += m
            c.ifo_lean += m
        else:
            if b >= m:
                diff = problem.local_grads(x) - problem.local_grads(x_prev)
                b_used = m
            else:
                idx = _draw_batches(rngs, m, b)
                diff = problem.batch_grads(x, idx) - problem.batch_grads(x_prev, idx)
                b_used = b
            v_new = diff + v
            c.ifo_strict += 2 * b_used
            c.ifo_lean += b_used
        y = w.w @ y + v_new - v
        v = v_new
        c.comm_rounds += 2
        c.comm_strict += 2
        _check_finite(t, 0, x, y)
        if trace_sink:
            trace_sink(StepEvent("outer", t, 0, c.copy(), x, NetworkState(x, y, x, v, v)))
    xbar = x.mean(axis=0)
    return RunResult(output=xbar, counters=c, mean_iterate=xbar, outer_steps=t,
                     trace=getattr(trace_sink, "trace", None))


@dataclass(frozen=True)
class DsgdSchedule:
    """Step size ``eta0 / (1 + (t - 1) / tau)`` at iteration ``t = 1, 2, ...``.

    ``tau = None`` means one tenth of the planned number of iterations;
    ``tau = inf`` gives a constant step.
    """

    eta0: float = 1.0
    tau: float | None = None

    def resolve(self, total: int) -> "DsgdSchedule":
        if self.tau is not None:
            return self
        return DsgdSchedule(self.eta0, max(total / 10.0, 1e-12))

    def eta(self, t: int) -> float:
        tau = self.tau if self.tau is not None else math.inf
        return self.eta0 / (1.0 + (t - 1) / tau)


def dsgd_run(
    problem: Problem,
    w: MixingMatrix,
    sched: DsgdSchedule,
    t_max: int | None = None,
    x0: np.ndarray | None = None,
    seed: int = 0,
    trace_sink: TraceSink | None = None,
    budget: Budget | None = None,
) -> RunResult:
    """Decentralized SGD: one sample gradient and one mixing round per agent per iteration."""
    _check_network(problem, w)
    limit = _outer_limit(t_max, budget)
    planned = min(v for v in (limit.max_outer, limit.max_comm, limit.max_ifo) if v is not None)
    sched = sched.resolve(planned)
    n, m = problem.n, problem.m
    rngs = agent_rngs(seed, n)
    c = Counters()
    x = _initial_stack(problem, x0)
    if trace_sink:
        trace_sink(StepEvent("init", 0, 0, c.copy(), x, None))
    t = 0
    while not limit.reached(c, t):
        t += 1
        idx = _draw_batches(rngs, m, 1)
        g = problem.batch_grads(x, idx)
        x = w.w @ (x - sched.eta(t) * g)
        c.comm_rounds += 1
        c.comm_strict += 1
        c.ifo_strict += 1
        c.ifo_lean += 1
        _check_finite(t, 0, x)
        if trace_sink:
            trace_sink(StepEvent("outer", t, 0, c.copy(), x, None))
    xbar = x.mean(axis=0)
    return RunResult(output=xbar, counters=c, mean_iterate=xbar, outer_steps=t,
                     trace=getattr(trace_sink, "trace", None))
