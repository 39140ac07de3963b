import numpy as np
import pytest

from destress_sim import (
    Budget,
    Dataset,
    DsgdSchedule,
    GtSarahParams,
    Hyperparams,
    MixingMatrix,
    Problem,
    RegLogisticModel,
    build_topology,
    destress_counters,
    destress_run,
    dsgd_run,
    generate_synthetic,
    global_grad_norm_sq,
    gt_sarah_run,
    metropolis_weights,
    partition_uniform,
)
from destress_sim.algorithms import agent_rngs
from destress_sim.errors import NonFiniteError, ShardMismatch

from oracles import centralized_sarah, naive_mean_grad

ONE = MixingMatrix.from_dense(np.ones((1, 1)))


def _problem(n, n_samples=200, d=5, seed=0, lam=0.01):
    ds = generate_synthetic(n_samples, d, seed=seed)
    return Problem(RegLogisticModel(d, lam), ds, partition_uniform(ds, n, seed=seed))


class Collect:
    def __init__(self):
        self.events = []

    def __call__(self, e):
        self.events.append(e)


def test_single_agent_matches_centralized_sarah():
    prob = _problem(1, n_samples=60)
    h = Hyperparams(eta=0.5, s_inner=10, batch=4, k_in=1, k_out=1, t_outer=5)
    sink = Collect()
    destress_run(prob, ONE, h, seed=3, trace_sink=sink)
    got = [e.iterate[0] for e in sink.events if e.phase == "inner"]
    feats, labels = prob.feats[0], prob.labels[0]
    ref = centralized_sarah(feats, labels, 0.01, np.zeros(5), 0.5, 5, 10, 4, agent_rngs(3, 1)[0])
    assert len(got) == len(ref) == 50
    assert max(np.abs(a - b).max() for a, b in zip(got, ref)) <= 1e-12


def test_complete_graph_rows_identical():
    prob = _problem(5)
    w = MixingMatrix.from_dense(np.full((5, 5), 0.2))
    sink = Collect()
    destress_run(prob, w, Hyperparams(0.3, 4, 2, 1, 1, t_outer=3), trace_sink=sink)
    for e in sink.events:
        for arr in (e.state.s, e.state.u, e.state.v):
            assert np.abs(arr - arr[0]).max() <= 1e-12


def test_mean_update_identity():
    prob = _problem(6)
    w = metropolis_weights(build_topology("path", 6))
    sink = Collect()
    h = Hyperparams(0.2, 5, 3, 2, 2, accelerated=True, t_outer=4)
    destress_run(prob, w, h, trace_sink=sink)
    prev = None
    for e in sink.events:
        if e.phase == "inner" and prev is not None:
            expected = prev.state.u.mean(axis=0) - h.eta * prev.state.v.mean(axis=0)
            np.testing.assert_allclose(e.state.u.mean(axis=0), expected, atol=1e-12)
        prev = e


@pytest.mark.parametrize("accelerated", [False, True])
def test_counters_closed_form(accelerated):
    prob = _problem(4, n_samples=80)
    w = metropolis_weights(build_topology("path", 4))
    h = Hyperparams(0.1, 7, 3, 2, 3, accelerated=accelerated, t_outer=6)
    res = destress_run(prob, w, h)
    assert res.counters == destress_counters(6, prob.m, h)
    assert res.counters.comm_rounds == 6 * (7 * 2 + 3)
    assert res.counters.ifo_per_agent == prob.m + 6 * (prob.m + 2 * 7 * 3)


def test_full_batch_counts_shard():
    prob = _problem(4, n_samples=40)
    h = Hyperparams(0.1, 3, 50, 1, 1, t_outer=2)
    res = destress_run(prob, metropolis_weights(build_topology("path", 4)), h)
    assert res.counters == destress_counters(2, prob.m, h)
    assert res.counters.ifo_lean == prob.m + 2 * (3 * prob.m + 2 * prob.m)


def test_budget_stops_at_outer_boundary():
    prob = _problem(4, n_samples=80)
    h = Hyperparams(0.1, 5, 2, 1, 1)
    res = destress_run(prob, metropolis_weights(build_topology("path", 4)), h, budget=Budget(max_comm=13))
    assert res.outer_steps == 3 and res.counters.comm_rounds == 18


def test_reservoir_output_is_uniform():
    prob = _problem(3, n_samples=30)
    w = metropolis_weights(build_topology("path", 3))
    h = Hyperparams(0.1, 4, 2, 1, 1, t_outer=3)
    counts = {}
    for seed in range(3000):
        res = destress_run(prob, w, h, seed=seed, keep_pool=(seed == 0))
        if seed == 0:
            assert len(res.pool) == 3 * 4 * 3
            idx = res.output_index
            t, s, i = idx
            assert np.array_equal(res.pool[((t - 1) * 4 + (s - 1)) * 3 + i], res.output)
        counts[res.output_index] = counts.get(res.output_index, 0) + 1
    assert len(counts) == 36
    freq = np.array(list(counts.values())) / 3000
    # binomial sd is about 0.0032 at p = 1/36
    assert np.abs(freq - 1 / 36).max() < 0.015


def test_shard_mismatch():
    prob = _problem(4)
    with pytest.raises(ShardMismatch):
        destress_run(prob, metropolis_weights(build_topology("path", 5)), Hyperparams(0.1, 2, 1, t_outer=1))
    with pytest.raises(ShardMismatch):
        destress_run(prob, metropolis_weights(build_topology("path", 4)), Hyperparams(0.1, 2, 1, t_outer=1),
                     x0=np.zeros(3))


class _Steep(RegLogisticModel):
    """Adds 500 |x|^2 so a unit step overshoots by a factor of about 1000."""

    def group_grads(self, xs, feats, labels):
        return super().group_grads(xs, feats, labels) + 1e3 * xs


def test_divergence_raises():
    ds = generate_synthetic(200, 5, seed=0)
    prob = Problem(_Steep(5), ds, partition_uniform(ds, 4, seed=0))
    w = metropolis_weights(build_topology("path", 4))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteError) as info:
            destress_run(prob, w, Hyperparams(1.0, 5, 2, t_outer=100), x0=np.ones(5))
    assert info.value.t >= 1


def test_gt_sarah_tracking_and_counters():
    prob = _problem(5)
    w = metropolis_weights(build_topology("grid", 5, rows=1, cols=5))
    sink = Collect()
    res = gt_sarah_run(prob, w, GtSarahParams(0.5, 3, 4, t_outer=9), trace_sink=sink)
    for e in sink.events:
        np.testing.assert_allclose(e.state.s.mean(axis=0), e.state.v.mean(axis=0), atol=1e-9)
    assert res.counters.comm_rounds == 18
    assert res.counters.ifo_strict == prob.m + 2 * prob.m + 7 * 2 * 3


def test_gt_sarah_q1_uses_full_gradients():
    prob = _problem(4)
    w = metropolis_weights(build_topology("path", 4))
    sink = Collect()
    gt_sarah_run(prob, w, GtSarahParams(0.5, 2, 1, t_outer=5), trace_sink=sink)
    for e in sink.events:
        np.testing.assert_allclose(e.state.v, prob.local_grads(e.iterate), atol=1e-13)


def test_dsgd_single_agent_is_sgd():
    prob = _problem(1, n_samples=40)
    res_sink = Collect()
    res = dsgd_run(prob, ONE, DsgdSchedule(0.3, float("inf")), 25, seed=2, trace_sink=res_sink)
    rng = agent_rngs(2, 1)[0]
    x = np.zeros(5)
    for _ in range(25):
        k = rng.integers(0, prob.m, size=1)[0]
        x = x - 0.3 * naive_mean_grad(x, prob.feats[0][[k]], prob.labels[0][[k]], 0.01)
    np.testing.assert_allclose(res.output, x, atol=1e-13)
    assert res.counters.comm_rounds == 25 and res.counters.ifo_per_agent == 25


def test_dsgd_schedule():
    s = DsgdSchedule(1.0).resolve(100)
    assert s.tau == 10.0
    assert s.eta(1) == 1.0 and s.eta(11) == pytest.approx(0.5)
    assert DsgdSchedule(0.2, float("inf")).eta(1000) == 0.2


def test_global_grad_norm_matches_oracles(rng):
    prob = _problem(4, n_samples=100)
    x = rng.standard_normal(5)
    g = naive_mean_grad(x, prob.feats.reshape(-1, 5), prob.labels.ravel(), 0.01)
    assert global_grad_norm_sq(prob, x) == pytest.approx(float(g @ g), abs=1e-12)
    local = np.mean([prob.model.mean_grad(x, prob.feats[i], prob.labels[i]) for i in range(4)], axis=0)
    assert global_grad_norm_sq(prob, x) == pytest.approx(float(local @ local), abs=1e-12)


def test_symmetric_data_at_origin():
    f = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    ds = Dataset(f, np.array([1.0, 0.0, 1.0, 0.0]))
    prob = Problem(RegLogisticModel(2, 0.01), ds, partition_uniform(ds, 2, seed=0))
    g = naive_mean_grad(np.zeros(2), f, ds.labels, 0.01)
    assert global_grad_norm_sq(prob, np.zeros(2)) == pytest.approx(float(g @ g), abs=1e-12)


def test_stationary_point_of_convex_problem():
    ds = generate_synthetic(300, 4, seed=1)
    prob = Problem(RegLogisticModel(4, 0.0), ds, partition_uniform(ds, 3, seed=0))
    feats, labels = prob.feats.reshape(-1, 4), prob.labels.ravel()
    # reference solve: plain gradient descent with the 1/L step
    x = np.zeros(4)
    for _ in range(20000):
        g = naive_mean_grad(x, feats, labels, 0.0) if _ % 1000 == 0 else prob.global_grad(x)
        if np.linalg.norm(g) <= 1e-10:
            break
        x = x - 4.0 * g
    assert np.linalg.norm(naive_mean_grad(x, feats, labels, 0.0)) <= 1e-9
    assert global_grad_norm_sq(prob, x) <= 1e-8
