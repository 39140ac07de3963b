"""Config-driven experiment runner.

An :class:`ExperimentConfig` names every ingredient of a run (graph,
mixing matrix, model, data, algorithm parameters, budget, seed), so a
config file plus the package version fully determines the trace it
produces.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import algorithms as alg
from .data import Dataset, generate_synthetic, generate_synthetic_multiclass, load_csv, partition_uniform, split_holdout
from .errors import ConfigInvalid, NumericalError
from .hyperparams import Hyperparams, derive_hyperparams, validate_step_size
from .mixing import MixingMatrix, load_mixing_csv, metropolis_weights
from .model import LossModel, MlpModel, RegLogisticModel
from .topology import Graph, GraphKind, build_topology
from .trace import RunTrace, TraceRecorder, atomic_write_text

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "Experiment",
    "RunOutcome",
    "parse_config",
    "load_config",
    "build_experiment",
    "run_experiment",
    "compare_suite",
    "tune_eta",
    "check_mixing",
    "spectral_gap_class",
    "THREADS_ENV",
]

THREADS_ENV = "DESTRESS_SIM_THREADS"
ALGORITHMS = ("destress", "gtsarah", "dsgd")
BUDGET_KEYS = ("max_comm", "max_ifo", "max_outer")

_DEFAULTS: dict[str, Any] = {
    "algorithm": "destress",
    "topology": {"kind": "path", "n": 20, "p": None, "rows": None, "cols": None, "seed": 0},
    "mixing": {"construction": "metropolis", "path": None, "accelerated": True},
    "model": {"kind": "reg_logistic", "lambda": 0.01},
    "data": {"kind": "synthetic", "n_samples": 1000, "d": 10, "seed": 0},
    "hyperparams": "auto",
    "budget": {},
    "seed": 0,
    "x0_scale": 0.0,
    "trace_path": None,
    "eval": {"holdout_frac": 0.0, "eval_every": None},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Resolved experiment description; ``to_dict`` / ``parse_config`` round-trip."""

    algorithm: str
    topology: dict
    mixing: dict
    model: dict
    data: dict
    hyperparams: Any
    budget: dict
    seed: int = 0
    x0_scale: float = 0.0
    trace_path: str | None = None
    eval: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "topology": dict(self.topology),
            "mixing": dict(self.mixing),
            "model": dict(self.model),
            "data": dict(self.data),
            "hyperparams": copy.deepcopy(self.hyperparams),
            "budget": dict(self.budget),
            "seed": self.seed,
            "x0_scale": self.x0_scale,
            "trace_path": self.trace_path,
            "eval": dict(self.eval),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **overrides: Any) -> "ExperimentConfig":
        return parse_config(_merge(self.to_dict(), overrides))

    def budget_obj(self) -> alg.Budget:
        return alg.Budget(**self.budget)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigInvalid(msg)


def parse_config(raw: dict, *, check_files: bool = True) -> ExperimentConfig:
    """Fill defaults into ``raw`` and validate it."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    unknown = set(raw) - set(_DEFAULTS)
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    d = _merge(_DEFAULTS, raw)
    if raw.get("hyperparams") is not None:
        d["hyperparams"] = copy.deepcopy(raw["hyperparams"])
    if "budget" in raw:
        d["budget"] = dict(raw["budget"])

    algo = d["algorithm"]
    _require(algo in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}, got {algo!r}")

    topo = d["topology"]
    try:
        kind = GraphKind.parse(str(topo["kind"]))
    except ValueError:
        raise ConfigInvalid(f"unknown topology kind {topo['kind']!r}") from None
    topo["kind"] = kind.value
    _require(isinstance(topo["n"], int) and topo["n"] >= 1, "topology.n must be a positive integer")
    if kind is GraphKind.ERDOS_RENYI:
        _require(topo.get("p") is not None and 0 < topo["p"] <= 1, "erdos_renyi needs 0 < p <= 1")

    mixing = d["mixing"]
    _require(mixing["construction"] in ("metropolis", "csv"), "mixing.construction must be metropolis or csv")
    if mixing["construction"] == "csv":
        _require(bool(mixing.get("path")), "mixing.path required for csv construction")
        if check_files:
            _require(Path(mixing["path"]).is_file(), f"mixing file {mixing['path']} not found")
    mixing["accelerated"] = bool(mixing.get("accelerated", False))

    model = d["model"]
    if model["kind"] == "reg_logistic":
        model = {"kind": "reg_logistic", "lambda": float(model.get("lambda", 0.01))}
        _require(model["lambda"] >= 0, "model.lambda must be nonnegative")
    elif model["kind"] == "mlp":
        model = {"kind": "mlp", "hidden": int(model.get("hidden", 64)), "classes": int(model.get("classes", 10)),
                 "smoothness_hint": float(model.get("smoothness_hint", 1.0))}
    else:
        raise ConfigInvalid(f"unknown model kind {model['kind']!r}")
    d["model"] = model

    data = d["data"]
    if data["kind"] == "synthetic":
        data = {"kind": "synthetic", "n_samples": int(data.get("n_samples", 1000)),
                "d": int(data.get("d", 10)), "seed": int(data.get("seed", 0))}
        _require(data["n_samples"] >= 1 and data["d"] >= 1, "synthetic data needs n_samples, d >= 1")
    elif data["kind"] == "csv":
        data = {"kind": "csv", "path": data.get("path"), "label_col": int(data.get("label_col", -1)),
                "header": bool(data.get("header", False)), "normalize": bool(data.get("normalize", True))}
        _require(bool(data["path"]), "data.path required for csv data")
        if check_files:
            _require(Path(data["path"]).is_file(), f"data file {data['path']} not found")
    else:
        raise ConfigInvalid(f"unknown data kind {data['kind']!r}")
    d["data"] = data

    hp = d["hyperparams"]
    required = {"destress": ("eta", "s_inner", "batch", "k_in", "k_out"),
                "gtsarah": ("eta", "batch", "q"),
                "dsgd": ("eta0",)}[algo]
    if hp == "auto":
        _require(algo == "destress", "automatic hyperparameters exist only for destress")
    else:
        _require(isinstance(hp, dict), "hyperparams must be 'auto' or an object")
        missing = [k for k in required if k not in hp]
        _require(not missing, f"hyperparams for {algo} missing {missing}")
        allowed = set(required) | {"dsgd": {"tau"}, "destress": set(), "gtsarah": set()}[algo]
        extra = set(hp) - allowed
        _require(not extra, f"unexpected hyperparams for {algo}: {sorted(extra)}")

    budget = {k: v for k, v in d["budget"].items() if v is not None}
    _require(set(budget) <= set(BUDGET_KEYS), f"budget keys must be among {BUDGET_KEYS}")
    _require(len(budget) == 1, "exactly one budget bound must be set")
    _require(all(isinstance(v, int) and v >= 1 for v in budget.values()), "budget must be a positive integer")
    d["budget"] = budget

    ev = d["eval"]
    frac = float(ev.get("holdout_frac") or 0.0)
    _require(0.0 <= frac < 1.0, "eval.holdout_frac must lie in [0, 1)")
    every = ev.get("eval_every")
    _require(every is None or (isinstance(every, int) and every >= 1), "eval.eval_every must be a positive integer")
    d["eval"] = {"holdout_frac": frac, "eval_every": every}

    return ExperimentConfig(
        algorithm=algo, topology=topo, mixing=mixing, model=model, data=data,
        hyperparams=hp, budget=budget, seed=int(d["seed"]), x0_scale=float(d["x0_scale"]),
        trace_path=d["trace_path"], eval=d["eval"],
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(raw)


@dataclass
class Experiment:
    """Everything a run needs, built from a config."""

    config: ExperimentConfig
    graph: Graph
    mixing: MixingMatrix
    model: LossModel
    train: Dataset
    test: Dataset | None
    problem: alg.Problem
    x0: np.ndarray


def _build_model(spec: dict, ds: Dataset) -> LossModel:
    if spec["kind"] == "reg_logistic":
        max_norm = float(np.linalg.norm(ds.features, axis=1).max())
        return RegLogisticModel(ds.d_f, spec["lambda"], max_feature_norm=max_norm)
    return MlpModel(ds.d_f, spec["hidden"], spec["classes"], smoothness_hint=spec["smoothness_hint"])


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    topo = cfg.topology
    graph = build_topology(topo["kind"], topo["n"], p=topo.get("p"), rows=topo.get("rows"),
                           cols=topo.get("cols"), seed=topo.get("seed", 0))
    if cfg.mixing["construction"] == "csv":
        w = load_mixing_csv(cfg.mixing["path"], graph)
    else:
        w = metropolis_weights(graph)
    spec = cfg.data
    if spec["kind"] == "synthetic":
        if cfg.model["kind"] == "mlp":
            ds = generate_synthetic_multiclass(spec["n_samples"], spec["d"], cfg.model["classes"], spec["seed"])
        else:
            ds = generate_synthetic(spec["n_samples"], spec["d"], spec["seed"])
    else:
        ds = load_csv(spec["path"], spec["label_col"], header=spec["header"], normalize=spec["normalize"])
    train, test = split_holdout(ds, cfg.eval["holdout_frac"], cfg.seed)
    partition = partition_uniform(train, graph.n, cfg.seed)
    model = _build_model(cfg.model, train)
    problem = alg.Problem(model, train, partition)
    x0 = np.zeros(model.dim)
    if cfg.x0_scale > 0:
        x0 = cfg.x0_scale * np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,))).standard_normal(model.dim)
    return Experiment(cfg, graph, w, model, train, test, problem, x0)


def resolve_hyperparams(exp: Experiment):
    """Concrete parameter object for the configured algorithm."""
    cfg = exp.config
    hp = cfg.hyperparams
    if cfg.algorithm == "destress":
        if hp == "auto":
            h = derive_hyperparams(exp.problem.m, exp.problem.n, exp.mixing.alpha, exp.model.smoothness_hint)
            h = h.with_(accelerated=cfg.mixing["accelerated"])
        else:
            h = Hyperparams(eta=float(hp["eta"]), s_inner=int(hp["s_inner"]), batch=int(hp["batch"]),
                            k_in=int(hp["k_in"]), k_out=int(hp["k_out"]),
                            accelerated=cfg.mixing["accelerated"])
        if not validate_step_size(h, exp.mixing.alpha, exp.model.smoothness_hint, exp.problem.n):
            log.warning("step size %.4g exceeds the guaranteed-convergence bound", h.eta)
        return h
    if cfg.algorithm == "gtsarah":
        return alg.GtSarahParams(eta=float(hp["eta"]), batch=int(hp["batch"]), q=int(hp["q"]))
    tau = hp.get("tau")
    return alg.DsgdSchedule(eta0=float(hp["eta0"]), tau=None if tau is None else float(tau))


def _default_eval_every(cfg: ExperimentConfig, params) -> int:
    if cfg.eval["eval_every"] is not None:
        return cfg.eval["eval_every"]
    if cfg.algorithm == "destress":
        return params.s_inner
    if cfg.algorithm == "gtsarah":
        return params.q
    return 10


@contextmanager
def _thread_cap() -> Iterator[None]:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = max(1, int(raw))
    except ValueError:
        raise ConfigInvalid(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    with threadpool_limits(limits=threads):
        yield


@dataclass
class RunOutcome:
    config: ExperimentConfig
    trace: RunTrace
    result: alg.RunResult | None
    error: NumericalError | None = None


def execute(exp: Experiment) -> tuple[RunTrace, alg.RunResult]:
    cfg = exp.config
    params = resolve_hyperparams(exp)
    rec = TraceRecorder(exp.problem, _default_eval_every(cfg, params), exp.test,
                        granularity="inner" if cfg.algorithm == "destress" else "iter")
    budget = cfg.budget_obj()
    # overflow on the way to divergence is reported as NonFiniteError instead
    with _thread_cap(), np.errstate(over="ignore", invalid="ignore"):
        if cfg.algorithm == "destress":
            res = alg.destress_run(exp.problem, exp.mixing, params, exp.x0, cfg.seed, rec, budget)
        elif cfg.algorithm == "gtsarah":
            res = alg.gt_sarah_run(exp.problem, exp.mixing, params, exp.x0, cfg.seed, rec, budget)
        else:
            res = alg.dsgd_run(exp.problem, exp.mixing, params, None, exp.x0, cfg.seed, rec, budget)
    trace = rec.finish()
    res.trace = trace
    return trace, res


def run_experiment(cfg: ExperimentConfig, trace_path: str | Path | None = None) -> RunTrace:
    """Run ``cfg`` and, when a trace path is configured, write the CSV atomically."""
    exp = build_experiment(cfg)
    trace, _ = execute(exp)
    target = trace_path or cfg.trace_path
    if target:
        trace.write(target)
    return trace


def tune_eta(cfg: ExperimentConfig, grid: Sequence[float], axis: str, budget: int) -> RunOutcome:
    """Best step size from ``grid`` by final gradient norm at the matched budget.

    Diverged runs lose to any finite one.
    """
    key = "eta0" if cfg.algorithm == "dsgd" else "eta"
    best: tuple[float, RunOutcome] | None = None
    for eta in grid:
        hp = cfg.hyperparams
        if hp == "auto":
            raise ConfigInvalid("step-size tuning needs explicit hyperparams")
        trial = cfg.replace(hyperparams={**hp, key: float(eta)})
        outcome = _run_capturing(trial)
        score = _score(outcome, axis, budget)
        if best is None or score < best[0]:
            best = (score, outcome)
    assert best is not None
    return best[1]


def _run_capturing(cfg: ExperimentConfig) -> RunOutcome:
    exp = build_experiment(cfg)
    try:
        trace, res = execute(exp)
        return RunOutcome(cfg, trace, res)
    except NumericalError as exc:
        return RunOutcome(cfg, RunTrace(), None, exc)


def _score(outcome: RunOutcome, axis: str, budget: int) -> float:
    if outcome.error is not None:
        return math.inf
    row = outcome.trace.last_within(axis, budget)
    return math.inf if row is None else row.grad_norm_sq


_AXES = {"comm": "comm_rounds", "comm_strict": "comm_strict", "ifo": "ifo_strict", "ifo_lean": "ifo_lean"}


def parse_budget(text: str) -> tuple[str, int]:
    """``"comm=1000"`` -> ``("comm_rounds", 1000)``."""
    try:
        name, value = text.split("=", 1)
        axis = _AXES[name.strip()]
        return axis, int(value)
    except (ValueError, KeyError):
        raise ConfigInvalid(f"budget must look like comm=<k> or ifo=<k>, got {text!r}") from None


SUMMARY_COLUMNS = ("label", "algorithm", "eta", "status", "axis", "budget", "comm_rounds", "comm_strict",
                   "ifo_strict", "ifo_lean", "train_loss", "grad_norm_sq", "consensus_err")


def _eta_of(cfg: ExperimentConfig) -> float | None:
    hp = cfg.hyperparams
    if not isinstance(hp, dict):
        return None
    return hp.get("eta", hp.get("eta0"))


def compare_suite(
    cfgs: Sequence[ExperimentConfig],
    axis: str = "comm_rounds",
    budget: int = 1000,
    eta_grid: Sequence[float] | None = None,
    labels: Sequence[str] | None = None,
) -> tuple[list[dict], dict[str, RunTrace]]:
    """Run every config (optionally tuning its step size over ``eta_grid``) and
    summarise the last trace row within ``budget`` on ``axis``.

    Each config's run budget is replaced by the matched one so no run stops
    short of it.
    """
    if not cfgs:
        raise ConfigInvalid("compare needs at least one config")
    shared = [(c.model, c.data, c.seed) for c in cfgs]
    _require(all(s == shared[0] for s in shared), "compared configs must share model, data and seed")
    run_budget = {"comm_rounds": "max_comm", "comm_strict": "max_comm", "ifo_strict": "max_ifo",
                  "ifo_lean": "max_ifo"}[axis]
    labels = list(labels) if labels else [c.algorithm for c in cfgs]
    if len(set(labels)) != len(labels):
        labels = [f"{lab}_{i}" for i, lab in enumerate(labels)]
    rows: list[dict] = []
    traces: dict[str, RunTrace] = {}
    for label, cfg in zip(labels, cfgs):
        cfg = parse_config({**cfg.to_dict(), "budget": {run_budget: budget}}, check_files=False)
        if eta_grid:
            outcome = tune_eta(cfg, eta_grid, axis, budget)
        else:
            outcome = _run_capturing(cfg)
        traces[label] = outcome.trace
        row = outcome.trace.last_within(axis, budget)
        summary = {"label": label, "algorithm": cfg.algorithm, "eta": _eta_of(outcome.config),
                   "status": "ok" if outcome.error is None else "diverged", "axis": axis, "budget": budget}
        for col in SUMMARY_COLUMNS[6:]:
            summary[col] = None if row is None or outcome.error else getattr(row, col)
        if outcome.error is None and outcome.config.trace_path:
            outcome.trace.write(outcome.config.trace_path)
        rows.append(summary)
    return rows, traces


def summary_csv(rows: list[dict]) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [",".join(SUMMARY_COLUMNS)]
    lines += [",".join(fmt(r[c]) for c in SUMMARY_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"


def write_summary(rows: list[dict], path: str | Path) -> None:
    atomic_write_text(path, summary_csv(rows))


def spectral_gap_class(kind: GraphKind | str) -> str:
    """Asymptotic order of ``1 - alpha`` for the graph family."""
    kind = GraphKind.parse(kind) if isinstance(kind, str) else kind
    return {
        GraphKind.COMPLETE: "1",
        GraphKind.ERDOS_RENYI: "1",
        GraphKind.GRID2D: "1/(n log n)",
        GraphKind.PATH: "1/n^2",
    }.get(kind, "unknown")


def check_mixing(kind: str, n: int, *, p: float | None = None, rows: int | None = None,
                 cols: int | None = None, seed: int = 0, construction: str = "metropolis",
                 path: str | None = None) -> dict:
    """Mixing rate, spectral gap and the family's spectral-gap order."""
    g = build_topology(kind, n, p=p, rows=rows, cols=cols, seed=seed)
    if construction == "csv":
        if not path:
            raise ConfigInvalid("csv construction needs a matrix file")
        w = load_mixing_csv(path, g)
    else:
        w = metropolis_weights(g)
    return {
        "kind": g.kind.value,
        "n": g.n,
        "edges": len(g.edges),
        "construction": w.construction,
        "alpha": w.alpha,
        "spectral_gap": 1.0 - w.alpha,
        "gap_order": spectral_gap_class(g.kind),
    }
