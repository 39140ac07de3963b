"""Simulator for decentralized nonconvex finite-sum optimization.

Implements DESTRESS (stochastic recursive gradients with gradient tracking
and multi-round gossip) together with the DSGD and GT-SARAH baselines, and
counts communication rounds and sample-gradient (IFO) evaluations exactly.
"""

from .algorithms import (
    Budget,
    Counters,
    DsgdSchedule,
    GtSarahParams,
    NetworkState,
    Problem,
    RunResult,
    StepEvent,
    destress_counters,
    destress_run,
    dsgd_run,
    global_grad_norm_sq,
    gt_sarah_run,
)
from .data import Dataset, Partition, generate_synthetic, load_csv, partition_uniform, write_csv
from .hyperparams import Hyperparams, derive_hyperparams, validate_step_size
from .mixing import (
    MixingMatrix,
    MixingSchedule,
    chebyshev_gossip,
    effective_alpha,
    gossip,
    metropolis_weights,
    mixing_rate,
)
from .model import MlpModel, RegLogisticModel, Sample, check_gradient, local_full_grad
from .topology import Graph, GraphKind, build_topology, is_connected

__version__ = "0.1.0"
