"""Run traces: the metric rows recorded during a run and their CSV form."""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .algorithms import Problem, StepEvent
from .data import Dataset
from .errors import ParseError
from .mixing import consensus_error

__all__ = ["TraceRow", "RunTrace", "TraceRecorder", "SCHEMA_VERSION", "atomic_write_text"]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TraceRow:
    outer_t: int
    inner_s: int
    comm_rounds: int
    comm_strict: int
    ifo_strict: int
    ifo_lean: int
    train_loss: float
    grad_norm_sq: float
    consensus_err: float
    test_acc: float | None = None


COLUMNS = tuple(f.name for f in fields(TraceRow))
_INT_COLUMNS = {"outer_t", "inner_s", "comm_rounds", "comm_strict", "ifo_strict", "ifo_lean"}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write ``text`` to a temporary sibling file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RunTrace:
    def __init__(self, rows: list[TraceRow] | None = None) -> None:
        self.rows: list[TraceRow] = list(rows or [])

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        if name not in COLUMNS:
            raise KeyError(name)
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows],
                        dtype=float)

    def last_within(self, axis: str, budget: float) -> TraceRow | None:
        """Last row whose ``axis`` counter does not exceed ``budget``."""
        found = None
        for r in self.rows:
            if getattr(r, axis) <= budget:
                found = r
        return found

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={SCHEMA_VERSION}\n")
        buf.write(",".join(COLUMNS) + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(v) for v in astuple(r)) + "\n")
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunTrace":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# schema="):
            raise ParseError(1, "missing '# schema=' line")
        if lines[0].strip() != f"# schema={SCHEMA_VERSION}":
            raise ParseError(1, f"unsupported trace schema {lines[0].strip()!r}")
        header = lines[1].split(",") if len(lines) > 1 else []
        if tuple(header) != COLUMNS:
            raise ParseError(2, "unexpected trace columns")
        rows = []
        for lineno, line in enumerate(lines[2:], start=3):
            parts = line.split(",")
            if len(parts) != len(COLUMNS):
                raise ParseError(lineno, "wrong number of fields")
            values = []
            for name, tok in zip(COLUMNS, parts):
                if tok == "":
                    values.append(None)
                elif name in _INT_COLUMNS:
                    values.append(int(tok))
                else:
                    values.append(float(tok))
            rows.append(TraceRow(*values))
        return cls(rows)

    @classmethod
    def read(cls, path: str | Path) -> "RunTrace":
        return cls.from_csv(Path(path).read_text())


class TraceRecorder:
    """Trace sink that evaluates metrics at the network-average iterate.

    With ``granularity="inner"`` (DESTRESS) a row is taken every
    ``eval_every`` inner steps; with ``"iter"`` (baselines) every
    ``eval_every`` iterations. The starting point is always
    recorded. Evaluations use the full training set and are not charged to
    the oracle counters.
    """

    def __init__(self, problem: Problem, eval_every: int, test_set: Dataset | None = None,
                 granularity: str = "inner") -> None:
        if eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if granularity not in ("inner", "iter"):
            raise ValueError(f"granularity must be 'inner' or 'iter', got {granularity!r}")
        self.problem = problem
        self.eval_every = eval_every
        self.test_set = test_set
        self.granularity = granularity
        self.trace = RunTrace()
        self._last_key: tuple[int, int] | None = None
        self._pending: StepEvent | None = None

    def _wanted(self, e: StepEvent) -> bool:
        if e.phase == "init":
            return True
        if self.granularity == "inner":
            return e.phase == "inner" and e.s % self.eval_every == 0
        return e.phase == "outer" and e.t % self.eval_every == 0

    def __call__(self, e: StepEvent) -> None:
        self._pending = e
        if self._wanted(e):
            self._record(e)

    def _record(self, e: StepEvent) -> None:
        xbar = e.iterate.mean(axis=0)
        g = self.problem.global_grad(xbar)
        acc = None
        if self.test_set is not None:
            acc = accuracy(self.problem.model, xbar, self.test_set)
        c = e.counters
        self.trace.append(TraceRow(
            outer_t=e.t, inner_s=e.s, comm_rounds=c.comm_rounds, comm_strict=c.comm_strict,
            ifo_strict=c.ifo_strict, ifo_lean=c.ifo_lean,
            train_loss=self.problem.global_loss(xbar), grad_norm_sq=float(g @ g),
            consensus_err=consensus_error(e.iterate), test_acc=acc,
        ))
        self._last_key = (c.comm_rounds, c.ifo_strict)

    def finish(self) -> RunTrace:
        """Record the final step if the sampling grid skipped it."""
        e = self._pending
        if e is not None and self._last_key != (e.counters.comm_rounds, e.counters.ifo_strict):
            self._record(e)
        return self.trace


def accuracy(model, x: np.ndarray, ds: Dataset) -> float:
    pred = model.predict(x, ds.features)
    return float(np.mean(pred == ds.labels))
