"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from destress_sim import (
    Hyperparams,
    MixingMatrix,
    Problem,
    RegLogisticModel,
    Sample,
    MlpModel,
    build_topology,
    check_gradient,
    chebyshev_gossip,
    destress_run,
    generate_synthetic,
    gossip,
    harness,
    metropolis_weights,
    mixing_rate,
    partition_uniform,
)
from destress_sim.algorithms import agent_rngs
from destress_sim.topology import Graph

from oracles import centralized_sarah, dense_alpha

DATA = {"kind": "synthetic", "n_samples": 1000, "d": 10, "seed": 0}
MODEL = {"kind": "reg_logistic", "lambda": 0.01}
ETA_GRID = [1.0, 0.1, 0.01]


def _config(algorithm, topology, hyperparams, budget, **extra):
    return harness.parse_config({"algorithm": algorithm, "topology": topology, "data": DATA, "model": MODEL,
                                 "hyperparams": hyperparams, "budget": budget, **extra})


class _Events:
    def __init__(self, phase):
        self.phase = phase
        self.events = []

    def __call__(self, e):
        if e.phase == self.phase:
            self.events.append(e)


def _grid_experiment():
    cfg = _config("destress", {"kind": "grid", "n": 20}, "auto", {"max_outer": 20})
    exp = harness.build_experiment(cfg)
    return exp, harness.resolve_hyperparams(exp)


def test_c01_gradient_tracking_identity(acceptance):
    start = time.perf_counter()
    exp, h = _grid_experiment()
    sink = _Events("outer")
    destress_run(exp.problem, exp.mixing, h.with_(t_outer=20), exp.x0, exp.config.seed, sink)
    worst = 0.0
    for e in sink.events:
        sbar = e.state.s.mean(axis=0)
        target = exp.problem.local_grads(e.state.x).mean(axis=0)
        worst = max(worst, np.linalg.norm(sbar - target) / (1.0 + np.linalg.norm(sbar)))
    elapsed = time.perf_counter() - start
    ok = len(sink.events) == 20 and worst <= 1e-9 and elapsed < 10
    acceptance("criterion 1 gradient-tracking identity",
               ok, f"max rel gap {worst:.2e} <= 1e-9 over t=1..{len(sink.events)}, {elapsed:.2f}s < 10s")


def test_c02_full_batch_inner_identity(acceptance):
    start = time.perf_counter()
    exp, h = _grid_experiment()
    m = exp.problem.m
    sink = _Events("inner")
    destress_run(exp.problem, exp.mixing, h.with_(batch=m, t_outer=5), exp.x0, exp.config.seed, sink)
    worst = 0.0
    for e in sink.events:
        vbar = e.state.v.mean(axis=0)
        target = exp.problem.local_grads(e.state.u).mean(axis=0)
        worst = max(worst, np.linalg.norm(vbar - target) / (1.0 + np.linalg.norm(vbar)))
    elapsed = time.perf_counter() - start
    ok = len(sink.events) == 5 * h.s_inner and worst <= 1e-9 and elapsed < 30
    acceptance("criterion 2 full-batch inner identity",
               ok, f"b=m={m}, max rel gap {worst:.2e} <= 1e-9 over {len(sink.events)} steps, {elapsed:.2f}s < 30s")


def test_c03_centralized_sarah_oracle(acceptance):
    ds = generate_synthetic(1000, 10, seed=0)
    prob = Problem(RegLogisticModel(10, 0.01), ds, partition_uniform(ds, 1, seed=0))
    one = MixingMatrix.from_dense(np.ones((1, 1)))
    h = Hyperparams(eta=0.5, s_inner=10, batch=10, k_in=1, k_out=1, t_outer=50)
    sink = _Events("inner")
    destress_run(prob, one, h, seed=7, trace_sink=sink)
    ref = centralized_sarah(prob.feats[0], prob.labels[0], 0.01, np.zeros(10), 0.5, 50, 10, 10,
                            agent_rngs(7, 1)[0])
    got = [e.iterate[0] for e in sink.events]
    dev = max(np.abs(a - b).max() for a, b in zip(got, ref))
    ok = len(got) == len(ref) == 500 and dev <= 1e-12
    acceptance("criterion 3 centralized SARAH equivalence", ok, f"max deviation {dev:.2e} <= 1e-12 over {len(got)} steps")


def _random_connected_graphs(count, seed):
    rng = np.random.default_rng(seed)
    graphs = []
    while len(graphs) < count:
        n = int(rng.integers(3, 31))
        if len(graphs) % 2 == 0:
            g = build_topology("erdos_renyi", n, p=float(rng.uniform(0.15, 0.6)), seed=int(rng.integers(2**31)))
        else:
            # random spanning tree plus a few chords: sparse, poorly mixing graphs
            pairs = {(int(rng.integers(0, i)), i) for i in range(1, n)}
            for _ in range(int(rng.integers(0, n))):
                a, b = sorted(rng.choice(n, 2, replace=False).tolist())
                pairs.add((a, b))
            g = Graph.from_pairs(n, pairs)
        graphs.append(g)
    return graphs


def test_c04_mixing_rate(acceptance):
    worst = 0.0
    for g in _random_connected_graphs(20, seed=4):
        w = metropolis_weights(g).w
        worst = max(worst, abs(mixing_rate(w) - dense_alpha(w)))
    path3 = mixing_rate(metropolis_weights(build_topology("path", 3)).w)
    complete = mixing_rate(metropolis_weights(build_topology("complete", 20)).w)
    ok = worst <= 1e-8 and abs(path3 - 2 / 3) <= 1e-10 and abs(complete) <= 1e-12
    acceptance("criterion 4 mixing rate", ok,
               f"max |power - dense| {worst:.2e} <= 1e-8 on 20 graphs; path-3 {path3!r}; complete {complete:.1e}")


def _test_matrices():
    mats = {name: metropolis_weights(build_topology(kind, 20, **kw))
            for name, kind, kw in (("path", "path", {}), ("grid", "grid", {}),
                                   ("er", "erdos_renyi", {"p": 0.3}), ("complete", "complete", {}))}
    # over-relaxed Metropolis on the ER graph: still doubly stochastic, with negative entries
    base = mats["er"].w
    over = np.eye(20) + 1.3 * (base - np.eye(20))
    assert over.min() < 0
    mats["er_negative"] = MixingMatrix.from_dense(over)
    return mats


def test_c05_contraction_certificates(acceptance):
    worst = -np.inf
    checked = 0
    for name, w in _test_matrices().items():
        for seed in range(100):
            x = np.random.default_rng(seed).standard_normal((w.n, 5))
            xbar = x.mean(axis=0)
            dev = np.linalg.norm(x - xbar)
            for k in (1, 2, 5, 8):
                y = gossip(w, x, k)
                worst = max(worst, np.linalg.norm(y - xbar) - w.alpha**k * dev)
                checked += 1
    ok = worst <= 1e-10
    acceptance("criterion 5 contraction certificates", ok,
               f"max excess over alpha^K bound {worst:.2e} <= 1e-10 ({checked} checks, 5 matrices x 100 states)")


def _worst_case_contraction(apply, n, seeds, iters=400):
    """Power iteration on the consensus-error map, started from each seeded state."""
    best = 0.0
    for seed in seeds:
        x = np.random.default_rng(seed).standard_normal((n, 1))
        x -= x.mean(axis=0)
        x /= np.linalg.norm(x)
        ratio = 0.0
        for _ in range(iters):
            y = apply(x)
            y -= y.mean(axis=0)
            ratio = np.linalg.norm(y)
            x = y / ratio
        best = max(best, ratio)
    return best


def test_c06_chebyshev_benefit(acceptance):
    w = metropolis_weights(build_topology("path", 20))
    seeds = range(100)
    cheb = _worst_case_contraction(lambda z: chebyshev_gossip(w, z, 8), 20, seeds)
    plain = _worst_case_contraction(lambda z: gossip(w, z, 8), 20, seeds)
    ok = cheb <= plain
    acceptance("criterion 6 Chebyshev benefit", ok,
               f"path n=20 K=8 worst-case contraction: chebyshev {cheb:.4f} <= plain {plain:.4f} "
               f"(alpha^8 = {w.alpha**8:.4f})")


def test_c07_counter_formulas(acceptance):
    ds = generate_synthetic(400, 5, seed=1)
    prob = Problem(RegLogisticModel(5, 0.01), ds, partition_uniform(ds, 8, seed=1))
    w = metropolis_weights(build_topology("path", 8))
    m = prob.m
    rng = np.random.default_rng(7)
    mismatches = []
    for _ in range(10):
        t, s, b, k_in, k_out = (int(rng.integers(1, 6)), int(rng.integers(1, 12)), int(rng.integers(1, m + 1)),
                                int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        h = Hyperparams(0.1, s, b, k_in, k_out, accelerated=bool(rng.integers(2)), t_outer=t)
        c = destress_run(prob, w, h, seed=int(rng.integers(1000))).counters
        if c.comm_rounds != t * (s * k_in + k_out) or c.ifo_lean != m + t * (s * b + 2 * m):
            mismatches.append((t, s, b, k_in, k_out))
    acceptance("criterion 7 counter formulas", not mismatches,
               f"10 random (T,S,b,K_in,K_out) tuples, exact mismatches: {mismatches or 'none'}")


def test_c08_desk_scale_convergence(acceptance):
    start = time.perf_counter()
    cfg = _config("destress", {"kind": "erdos_renyi", "n": 20, "p": 0.3},
                  {"eta": 1.0, "s_inner": 10, "batch": 10, "k_in": 2, "k_out": 2}, {"max_comm": 5000})
    best = harness.tune_eta(cfg, ETA_GRID, "comm_rounds", 5000)
    row = best.trace.last_within("comm_rounds", 5000)
    elapsed = time.perf_counter() - start
    ok = row is not None and row.grad_norm_sq <= 1e-4 and elapsed < 60
    acceptance("criterion 8 desk-scale convergence", ok,
               f"ER p=0.3, eta={best.config.hyperparams['eta']}: grad_norm_sq {row.grad_norm_sq:.2e} <= 1e-4 "
               f"at {row.comm_rounds} comm rounds, {elapsed:.1f}s < 60s")


def test_c09_path_graph_ordering(acceptance):
    start = time.perf_counter()
    topo = {"kind": "path", "n": 20}
    one = {"max_comm": 1}
    cfgs = [
        _config("destress", topo, {"eta": 1.0, "s_inner": 10, "batch": 10, "k_in": 8, "k_out": 8}, one),
        _config("gtsarah", topo, {"eta": 1.0, "batch": 10, "q": 10}, one),
        _config("dsgd", topo, {"eta0": 1.0}, one),
    ]
    rows, _ = harness.compare_suite(cfgs, "comm_rounds", 2000, ETA_GRID)
    final = {r["algorithm"]: r["grad_norm_sq"] for r in rows}
    etas = {r["algorithm"]: r["eta"] for r in rows}
    elapsed = time.perf_counter() - start
    ok = (final["destress"] <= final["gtsarah"] and max(final["destress"], final["gtsarah"]) <= final["dsgd"]
          and elapsed < 300)
    detail = ", ".join(f"{a} {final[a]:.2e} (eta {etas[a]})" for a in ("destress", "gtsarah", "dsgd"))
    acceptance("criterion 9 path-graph ordering at 2000 comm rounds", ok,
               f"need destress <= gtsarah <= dsgd: {detail}; {elapsed:.1f}s < 300s")


def test_c10_gradient_checks(acceptance):
    rng = np.random.default_rng(10)
    logistic = RegLogisticModel(10, 0.01)
    mlp = MlpModel(10, 16, 10)
    failures = {"logistic": 0, "mlp": 0}
    for _ in range(50):
        f = rng.standard_normal(10)
        f /= np.linalg.norm(f)
        if not check_gradient(logistic, rng.standard_normal(10), Sample(f, float(rng.integers(2))), 1e-6, 1e-5):
            failures["logistic"] += 1
        if not check_gradient(mlp, rng.standard_normal(mlp.dim), Sample(f, float(rng.integers(10))), 1e-6, 1e-4):
            failures["mlp"] += 1
    ok = not any(failures.values())
    acceptance("criterion 10 gradient checks", ok,
               f"50 points per model, failures logistic={failures['logistic']} (tol 1e-5), "
               f"mlp={failures['mlp']} (tol 1e-4)")


@pytest.mark.parametrize("algorithm,hp", [
    ("destress", "auto"),
    ("gtsarah", {"eta": 0.1, "batch": 10, "q": 10}),
    ("dsgd", {"eta0": 1.0}),
])
def test_c11_determinism(acceptance, tmp_path, algorithm, hp):
    cfg = _config(algorithm, {"kind": "erdos_renyi", "n": 20, "p": 0.3}, hp, {"max_comm": 400},
                  eval={"holdout_frac": 0.2}, x0_scale=0.5)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    harness.run_experiment(cfg, a)
    harness.run_experiment(cfg, b)
    same = a.read_bytes() == b.read_bytes()
    acceptance(f"criterion 11 determinism ({algorithm})", same,
               f"two runs of one config give byte-identical traces ({len(a.read_bytes())} bytes)")
