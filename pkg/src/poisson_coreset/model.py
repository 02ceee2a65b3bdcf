"""Poisson p-th-root-link model: data container, per-point loss and derivatives.

The per-point negative log-likelihood for a count ``y`` at linear predictor
``z = x @ beta`` is::

    g_y(z) = z**p - p*y*log(z) + log(y!)

Only ``p in {1, 2}`` is accepted by the main pipeline.  All logarithms are
natural.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

LOG_FACTORIAL_TABLE_MAX = 1024
# exp(x) underflows to zero below this
EXP_UNDERFLOW = -745.0

_LOG_FACT_TABLE = np.array(
    [math.fsum(math.log(k) for k in range(2, y + 1)) for y in range(LOG_FACTORIAL_TABLE_MAX + 1)]
)


class DomainError(ValueError):
    """Raised when a linear predictor leaves the open domain ``z > 0``."""


@dataclass(frozen=True)
class Infeasible:
    """Sentinel returned instead of a loss when some ``x_i beta <= 0``."""

    min_value: float
    row: int

    def __bool__(self) -> bool:
        return False


def check_link_power(p: int) -> int:
    if p not in (1, 2):
        raise ValueError(f"link power must be 1 or 2, got {p!r}")
    return int(p)


@dataclass(frozen=True)
class Dataset:
    """Raw covariates plus nonnegative integer counts.

    The intercept is not stored; :attr:`X` prepends the all-ones column.
    """

    features: np.ndarray
    labels: np.ndarray
    y_max: int = field(init=False)

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        labels_raw = np.asarray(self.labels)
        if features.ndim != 2 or labels_raw.ndim != 1:
            raise ValueError("features must be 2-d and labels 1-d")
        if features.shape[0] != labels_raw.shape[0]:
            raise ValueError(
                f"row count mismatch: {features.shape[0]} features vs {labels_raw.shape[0]} labels"
            )
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise ValueError("need n >= 1 rows and at least one covariate (d >= 2)")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        if np.any(labels_raw < 0) or np.any(np.asarray(labels_raw, dtype=float) % 1 != 0):
            raise ValueError("labels must be nonnegative integers")
        labels = labels_raw.astype(np.int64)
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "y_max", int(labels.max()))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1] + 1

    @property
    def X(self) -> np.ndarray:
        return np.hstack([np.ones((self.n, 1)), self.features])

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.features[rows], self.labels[rows])


def load_csv(path: str | Path) -> Dataset:
    """Read ``f1,...,f{d-1},y`` rows; the intercept column is implied."""
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader)
        if not header or header[-1].strip() != "y":
            raise ValueError(f"{path}: last header column must be 'y', got {header!r}")
        rows = [r for r in reader if r]
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    return Dataset(data[:, :-1], data[:, -1])


def save_csv(data: Dataset, path: str | Path) -> None:
    header = [f"f{j}" for j in range(1, data.d)] + ["y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for feats, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in feats] + [int(y)])


# ---------------------------------------------------------------------------
# log(y!) and the per-point minimum value
# ---------------------------------------------------------------------------

def log_factorial(y):
    """``log(y!)``: exact summation table up to 1024, log-gamma above."""
    y_arr = np.asarray(y, dtype=np.int64)
    if np.any(y_arr < 0):
        raise ValueError("log_factorial needs y >= 0")
    small = y_arr <= LOG_FACTORIAL_TABLE_MAX
    out = np.empty(y_arr.shape, dtype=float)
    out[small] = _LOG_FACT_TABLE[y_arr[small]]
    if not np.all(small):
        out[~small] = gammaln(y_arr[~small].astype(float) + 1.0)
    return out if out.ndim else float(out)


def min_value(y):
    """``g_y(y**(1/p)) = y - y*log(y) + log(y!)``, independent of ``p``.

    Above the table the Stirling series is summed directly, which avoids the
    cancellation between ``log(y!)`` and ``y*log(y)``.
    """
    y_arr = np.asarray(y, dtype=np.int64)
    out = np.zeros(y_arr.shape, dtype=float)
    small = (y_arr >= 1) & (y_arr <= LOG_FACTORIAL_TABLE_MAX)
    ys = y_arr[small].astype(float)
    out[small] = ys - ys * np.log(ys) + _LOG_FACT_TABLE[y_arr[small]]
    big = y_arr > LOG_FACTORIAL_TABLE_MAX
    if np.any(big):
        yb = y_arr[big].astype(float)
        out[big] = (
            0.5 * np.log(2.0 * np.pi * yb)
            + 1.0 / (12.0 * yb)
            - 1.0 / (360.0 * yb**3)
            + 1.0 / (1260.0 * yb**5)
        )
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# per-point loss
# ---------------------------------------------------------------------------

def _loss_terms(z: np.ndarray, y: np.ndarray, p: int) -> np.ndarray:
    """Vectorised ``g_y(z)`` for strictly positive ``z`` (no checks).

    Written as ``(z**p - y) - p*y*log(z/tau) + min_value(y)`` with
    ``tau = y**(1/p)`` so that large counts keep full relative accuracy.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    yf = y.astype(float)
    pos = y > 0
    tau = np.where(pos, yf ** (1.0 / p), 1.0)
    log_ratio = np.log(z / tau)
    return np.where(pos, (z**p - yf) - p * yf * log_ratio + min_value(y), z**p)


def _loss_terms_log(log_z: np.ndarray, y: np.ndarray, p: int) -> np.ndarray:
    log_z = np.asarray(log_z, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    yf = y.astype(float)
    pos = y > 0
    power = np.where(p * log_z < EXP_UNDERFLOW, 0.0, np.exp(np.maximum(p * log_z, EXP_UNDERFLOW)))
    log_tau = np.where(pos, np.log(np.where(pos, yf, 1.0)) / p, 0.0)
    return np.where(pos, (power - yf) - p * yf * (log_z - log_tau) + min_value(y), power)


def point_loss(y: int, z: float | None = None, p: int = 1, *, log_z: float | None = None) -> float:
    """``g_y(z)``; pass ``log_z`` instead of ``z`` when ``z`` would underflow."""
    p = check_link_power(p)
    if y < 0 or int(y) != y:
        raise ValueError("y must be a nonnegative integer")
    if log_z is not None:
        return float(_loss_terms_log(log_z, y, p))
    if z is None:
        raise TypeError("give z or log_z")
    if not z > 0:
        raise DomainError(f"z = {z!r} outside the domain z > 0")
    if y == 0:
        return float(z) ** p
    return float(_loss_terms(z, y, p))


def point_derivatives(y, z, p: int) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative of ``g_y`` at ``z``."""
    z = np.asarray(z, dtype=float)
    yf = np.asarray(y, dtype=float)
    g1 = p * z ** (p - 1) - p * yf / z
    g2 = p * (p - 1) * z ** (p - 2) + p * yf / z**2
    return g1, g2


# ---------------------------------------------------------------------------
# total loss over a dataset or raw rows
# ---------------------------------------------------------------------------

def _check_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights shape {w.shape} does not match {n} rows")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    return w


def rows_loss(X: np.ndarray, y: np.ndarray, beta: np.ndarray, weights=None, p: int = 1) -> float | Infeasible:
    """Weighted loss on explicit design rows (intercept column included)."""
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.ndim != 2 or beta.shape != (X.shape[1],):
        raise ValueError(f"beta of shape {beta.shape} does not fit rows of shape {X.shape}")
    w = _check_weights(weights, X.shape[0])
    z = X @ beta
    i = int(np.argmin(z))
    if not z[i] > 0:
        return Infeasible(float(z[i]), i)
    return float(np.sum(w * _loss_terms(z, y, p)))


def total_loss(data: Dataset, beta, weights=None, p: int = 1) -> float | Infeasible:
    """``sum_i w_i g_{y_i}(x_i beta)``, or :class:`Infeasible` if some ``x_i beta <= 0``."""
    p = check_link_power(p)
    return rows_loss(data.X, data.labels, beta, weights, p)


def rows_gradient_hessian(X, y, beta, weights=None, p: int = 1) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    w = _check_weights(weights, X.shape[0])
    z = X @ np.asarray(beta, dtype=float)
    if np.any(z <= 0):
        raise DomainError("beta is infeasible: some x_i beta <= 0")
    g1, g2 = point_derivatives(y, z, p)
    grad = X.T @ (w * g1)
    hess = (X * (w * g2)[:, None]).T @ X
    return grad, hess


def loss_gradient_hessian(data: Dataset, beta, weights=None, p: int = 1) -> tuple[np.ndarray, np.ndarray]:
    p = check_link_power(p)
    return rows_gradient_hessian(data.X, data.labels, beta, weights, p)


class Membership(NamedTuple):
    inside: bool
    margin: float


def membership_D(data: Dataset | np.ndarray, beta, eta: float = 0.0) -> Membership:
    """Is ``min_i x_i beta > eta``?  ``margin = min_i x_i beta - eta``."""
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    margin = float(np.min(X @ np.asarray(beta, dtype=float))) - eta
    return Membership(margin > 0, margin)


def shift_params(beta, eta: float) -> np.ndarray:
    """Translate along the intercept: ``beta + eta * e_1``."""
    out = np.array(beta, dtype=float)
    out[0] += eta
    return out


def random_feasible_beta(features: np.ndarray, rng: np.random.Generator, eta: float = 0.0) -> np.ndarray:
    """A random parameter with ``min_i x_i beta = eta + margin``.

    The slope is Gaussian at a log-uniform scale in ``[1e-2, 1e2]`` and the
    extra margin is log-uniform in ``[1e-3, 10]``; the intercept is then set
    to put the closest row exactly at that margin.
    """
    F = np.asarray(features, dtype=float)
    u = rng.standard_normal(F.shape[1]) * 10.0 ** rng.uniform(-2, 2)
    margin = eta + 10.0 ** rng.uniform(-3, 1)
    return np.concatenate([[margin - np.min(F @ u)], u])
