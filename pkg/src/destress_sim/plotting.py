"""Figures for run traces: gradient norm and loss against communication and
gradient evaluations, one line per algorithm."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trace import RunTrace  # noqa: E402

__all__ = ["plot_traces", "render_report_figures"]

_AXIS_LABELS = {
    "comm_rounds": "communication rounds",
    "comm_strict": "mixing products",
    "ifo_strict": "gradient evaluations per agent",
    "ifo_lean": "gradient evaluations per agent",
}

_STYLE = {
    "figure.figsize": (5.0, 3.4),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def plot_traces(traces: Mapping[str, RunTrace], x: str, y: str, path: str | Path,
                budget: float | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, trace in traces.items():
            if len(trace) == 0:
                continue
            ax.plot(trace.column(x), trace.column(y), label=label, lw=1.2)
        if y in ("grad_norm_sq", "consensus_err"):
            ax.set_yscale("log")
        if budget is not None:
            ax.axvline(budget, color="0.5", ls=":", lw=0.8)
        ax.set_xlabel(_AXIS_LABELS.get(x, x))
        ax.set_ylabel({"grad_norm_sq": r"$\|\nabla f(\bar x)\|^2$", "train_loss": "training loss",
                       "consensus_err": "consensus error", "test_acc": "test accuracy"}.get(y, y))
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def render_report_figures(traces: Mapping[str, RunTrace], out_dir: str | Path,
                          budget_axis: str | None = None, budget: float | None = None) -> list[Path]:
    """Write the standard figure set into ``out_dir``."""
    out_dir = Path(out_dir)
    written = []
    for x, tag in (("comm_rounds", "comm"), ("ifo_strict", "ifo")):
        mark = budget if budget_axis == x else None
        written.append(plot_traces(traces, x, "grad_norm_sq", out_dir / f"grad_norm_vs_{tag}.png", mark))
        written.append(plot_traces(traces, x, "train_loss", out_dir / f"loss_vs_{tag}.png", mark))
    if any(len(t) and t.rows[-1].test_acc is not None for t in traces.values()):
        written.append(plot_traces(traces, "comm_rounds", "test_acc", out_dir / "test_acc_vs_comm.png"))
    return written
