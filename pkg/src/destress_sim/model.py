"""Sample losses with exact gradients.

Each model evaluates the loss of one sample ``z = (features, label)`` at a
parameter vector ``x``. The vectorised entry points work on *groups*: ``g``
parameter vectors, each paired with its own batch of ``k`` samples, which
is exactly the shape of "every agent evaluates a mini-batch at its own
iterate".
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import DimensionMismatch, EmptyShard

__all__ = [
    "Sample",
    "LossModel",
    "RegLogisticModel",
    "MlpModel",
    "loss_value",
    "loss_grad",
    "local_full_grad",
    "check_gradient",
    "gradient_error",
]


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: float

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError("sample features must be a finite 1-D vector")
        object.__setattr__(self, "features", f)


class LossModel(abc.ABC):
    """Interface for a sample loss ``l(x; z)`` over ``x`` in ``R^dim``."""

    dim: int
    n_features: int
    smoothness_hint: float

    @abc.abstractmethod
    def group_values(self, xs: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Mean loss per group: ``xs`` (g, dim), ``feats`` (g, k, d_f), ``labels`` (g, k) -> (g,)."""

    @abc.abstractmethod
    def group_grads(self, xs: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Mean gradient per group, shape (g, dim)."""

    def _check_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"parameter has length {x.shape[-1]}, model expects {self.dim}")
        return x

    def _check_z(self, z: Sample) -> None:
        if z.features.shape[0] != self.n_features:
            raise DimensionMismatch(
                f"sample has {z.features.shape[0]} features, model expects {self.n_features}"
            )

    def value(self, x: np.ndarray, z: Sample) -> float:
        x = self._check_x(x)
        self._check_z(z)
        return float(self.group_values(x[None, :], z.features[None, None, :], np.array([[z.label]]))[0])

    def grad(self, x: np.ndarray, z: Sample) -> np.ndarray:
        x = self._check_x(x)
        self._check_z(z)
        return self.group_grads(x[None, :], z.features[None, None, :], np.array([[z.label]]))[0]

    def mean_grad(self, x: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> np.ndarray:
        x = self._check_x(x)
        return self.group_grads(x[None, :], feats[None], labels[None])[0]

    def mean_value(self, x: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> float:
        x = self._check_x(x)
        return float(self.group_values(x[None, :], feats[None], labels[None])[0])

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class RegLogisticModel(LossModel):
    """Binary logistic loss with the bounded nonconvex penalty ``lam * sum x_i^2/(1+x_i^2)``.

    The model's probability of label 1 is ``sigmoid(-x.f)``, so the data
    term is ``l * softplus(x.f) + (1 - l) * softplus(-x.f)``.
    """

    def __init__(self, d: int, lam: float = 0.01, smoothness_hint: float | None = None,
                 max_feature_norm: float = 1.0) -> None:
        if d < 1:
            raise ValueError("dimension must be positive")
        if lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {lam}")
        self.dim = self.n_features = d
        self.lam = float(lam)
        if smoothness_hint is None:
            smoothness_hint = 0.25 * max_feature_norm**2 + 2.0 * self.lam
        self.smoothness_hint = float(smoothness_hint)

    def _penalty(self, xs: np.ndarray) -> np.ndarray:
        # x^2/(1+x^2) written as 1 - 1/(1+x^2) stays finite when x^2 overflows
        with np.errstate(over="ignore"):
            inv = 1.0 / (1.0 + xs * xs)
        return self.lam * np.sum(1.0 - inv, axis=-1)

    def group_values(self, xs, feats, labels):
        a = np.einsum("gd,gkd->gk", xs, feats)
        data = labels * np.logaddexp(0.0, a) + (1.0 - labels) * np.logaddexp(0.0, -a)
        return data.mean(axis=1) + self._penalty(xs)

    def group_grads(self, xs, feats, labels):
        a = np.einsum("gd,gkd->gk", xs, feats)
        coef = expit(a) - (1.0 - labels)
        data = np.einsum("gk,gkd->gd", coef, feats) / feats.shape[1]
        with np.errstate(over="ignore"):
            inv = 1.0 / (1.0 + xs * xs)
        return data + 2.0 * self.lam * xs * inv * inv

    def predict(self, x: np.ndarray, feats: np.ndarray) -> np.ndarray:
        """Label 1 where the model assigns it probability above one half."""
        return (feats @ self._check_x(x) < 0.0).astype(float)

    def describe(self) -> dict:
        return {"kind": "reg_logistic", "lambda": self.lam, "smoothness_hint": self.smoothness_hint}


class MlpModel(LossModel):
    """One hidden sigmoid layer followed by a softmax cross-entropy output.

    Parameters are flattened as ``[W1 | b1 | W2 | b2]`` with ``W1`` of shape
    (hidden, input) and ``W2`` of shape (classes, hidden), both row-major.
    There is no theory constant for this model, so ``smoothness_hint`` is
    whatever the caller supplies.
    """

    def __init__(self, input_dim: int, hidden_dim: int = 64, n_classes: int = 10,
                 smoothness_hint: float = 1.0) -> None:
        self.input_dim = self.n_features = input_dim
        self.hidden_dim = hidden_dim
        self.n_classes = n_classes
        self.dim = hidden_dim * (input_dim + 1) + n_classes * (hidden_dim + 1)
        self.smoothness_hint = float(smoothness_hint)

    def unpack(self, xs: np.ndarray):
        h, i, c = self.hidden_dim, self.input_dim, self.n_classes
        g = xs.shape[0]
        o1 = h * i
        o2 = o1 + h
        o3 = o2 + c * h
        return (xs[:, :o1].reshape(g, h, i), xs[:, o1:o2],
                xs[:, o2:o3].reshape(g, c, h), xs[:, o3:])

    def init_params(self, rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
        return scale * rng.standard_normal(self.dim)

    def _forward(self, xs, feats):
        w1, b1, w2, b2 = self.unpack(xs)
        hidden = expit(np.einsum("ghi,gki->gkh", w1, feats) + b1[:, None, :])
        logits = np.einsum("gch,gkh->gkc", w2, hidden) + b2[:, None, :]
        return hidden, logits

    def group_values(self, xs, feats, labels):
        _, logits = self._forward(xs, feats)
        logp = log_softmax(logits, axis=-1)
        idx = labels.astype(int)[..., None]
        return -np.take_along_axis(logp, idx, axis=-1)[..., 0].mean(axis=1)

    def group_grads(self, xs, feats, labels):
        _, _, w2, _ = self.unpack(xs)
        hidden, logits = self._forward(xs, feats)
        k = feats.shape[1]
        d_out = softmax(logits, axis=-1)
        np.put_along_axis(d_out, labels.astype(int)[..., None],
                          np.take_along_axis(d_out, labels.astype(int)[..., None], axis=-1) - 1.0, axis=-1)
        d_out /= k
        g_w2 = np.einsum("gkc,gkh->gch", d_out, hidden)
        g_b2 = d_out.sum(axis=1)
        d_hidden = np.einsum("gkc,gch->gkh", d_out, w2) * hidden * (1.0 - hidden)
        g_w1 = np.einsum("gkh,gki->ghi", d_hidden, feats)
        g_b1 = d_hidden.sum(axis=1)
        g = xs.shape[0]
        return np.concatenate(
            [g_w1.reshape(g, -1), g_b1, g_w2.reshape(g, -1), g_b2], axis=1
        )

    def predict(self, x: np.ndarray, feats: np.ndarray) -> np.ndarray:
        _, logits = self._forward(self._check_x(x)[None, :], feats[None])
        return logits[0].argmax(axis=-1)

    def describe(self) -> dict:
        return {"kind": "mlp", "hidden": self.hidden_dim, "classes": self.n_classes,
                "output_loss": "softmax_cross_entropy", "smoothness_hint": self.smoothness_hint}


def loss_value(model: LossModel, x: np.ndarray, z: Sample) -> float:
    return model.value(x, z)


def loss_grad(model: LossModel, x: np.ndarray, z: Sample) -> np.ndarray:
    return model.grad(x, z)


def local_full_grad(model: LossModel, x: np.ndarray, shard: Sequence[Sample]) -> np.ndarray:
    """Gradient of the shard-average loss at ``x``."""
    if len(shard) == 0:
        raise EmptyShard("local gradient of an empty shard")
    feats = np.stack([z.features for z in shard])
    labels = np.array([z.label for z in shard], dtype=float)
    return model.mean_grad(x, feats, labels)


def gradient_error(model: LossModel, x: np.ndarray, z: Sample, step: float = 1e-6) -> float:
    """Max coordinate gap between the analytic and central-difference gradient,
    relative to the larger of the two gradients' max-norms."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    x = np.asarray(x, dtype=float)
    analytic = model.grad(x, z)
    numeric = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        numeric[i] = (model.value(x + e, z) - model.value(x - e, z)) / (2.0 * step)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradient(model: LossModel, x: np.ndarray, z: Sample, step: float = 1e-6, tol: float = 1e-5) -> bool:
    return gradient_error(model, x, z, step) <= tol
