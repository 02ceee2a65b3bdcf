"""Synthetic instances: a simplex benchmark family and the circle hard instance."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .model import Dataset, _loss_terms, _loss_terms_log, check_link_power

INTERIOR_SCALE = 0.9


@dataclass(frozen=True)
class SyntheticSpec:
    family: str  # "f2" or "circle"
    n: int
    d: int
    p: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in ("f2", "circle"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "f2":
            check_link_power(self.p)
            if self.d < 3 or self.n < self.d:
                raise ValueError("f2 needs d >= 3 and n >= d")
        elif self.d < 3 or self.n < 8:
            raise ValueError("circle needs d >= 3 and n >= 8")

    def generate(self) -> tuple[Dataset, np.ndarray | None]:
        if self.family == "f2":
            return generate_f2(self.n, self.d, self.p, self.seed)
        return generate_circle(self.n, self.d, self.seed), None

    def write(self, out: str | Path) -> tuple[Path, Path]:
        from .model import save_csv

        data, beta = self.generate()
        out = Path(out)
        save_csv(data, out)
        side = out.with_suffix(out.suffix + ".json")
        meta = {"family": self.family, "n": self.n, "d": self.d, "p": self.p, "seed": self.seed,
                "true_beta": None if beta is None else [float(b) for b in beta]}
        side.write_text(json.dumps(meta, indent=2) + "\n")
        return out, side


def simplex_interior(G: np.ndarray, scale: float = INTERIOR_SCALE) -> np.ndarray:
    """Map Gaussian rows of width ``k`` strictly inside ``conv{0, e_1, ..., e_k}``.

    Each row becomes ``scale * softmax([g, 0])[:k]``; its coordinates are
    positive and sum to at most ``scale < 1``.
    """
    padded = np.hstack([G, np.zeros((G.shape[0], 1))])
    return scale * softmax(padded, axis=1)[:, :-1]


def generate_f2(n: int, d: int, p: int = 1, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Simplex vertices plus interior points, Poisson counts with rate ``(x beta)**p``.

    ``d`` counts the intercept, so the features live in ``R^{d-1}``.  The first
    ``d`` rows are ``e_1, ..., e_{d-1}`` and the origin.
    """
    SyntheticSpec("f2", n, d, p, seed)
    p = check_link_power(p)
    k = d - 1
    rng = np.random.default_rng(seed)
    vertices = np.vstack([np.eye(k), np.zeros((1, k))])
    interior = simplex_interior(rng.standard_normal((n - d, k)))
    Z = np.vstack([vertices, interior])
    slope = 10.0 ** (1.0 / p) * rng.standard_normal(k)
    low = float(np.min(Z @ slope))
    b = max(1.0, 2.0 ** (1.0 / p) * abs(low))
    beta = np.concatenate([[b], slope])
    rate = (b + Z @ slope) ** p
    y = rng.poisson(rate)
    return Dataset(Z, y), beta


def generate_circle(n: int, d: int = 3, seed: int = 0) -> Dataset:
    """``n`` equally spaced unit-circle points in the first two features, all labels 1.

    The instance is deterministic; ``seed`` is accepted for a uniform interface.
    """
    SyntheticSpec("circle", n, d, 1, seed)
    t = 2.0 * math.pi * np.arange(1, n + 1) / n
    F = np.zeros((n, d - 1))
    F[:, 0] = np.cos(t)
    F[:, 1] = np.sin(t)
    return Dataset(F, np.ones(n, dtype=np.int64))


@dataclass(frozen=True)
class CircleDemo:
    n: int
    log_eta: float
    point_cost: float  # g_1 at the row sitting at depth eta
    bound: float  # point_cost / (point_cost + 8 n log n)
    exact_denominator: float  # sum of g_1 over all rows at the same parameter
    exact_ratio: float


def circle_sensitivity_demo(n: int, log_eta: float | None = None, p: int = 1) -> CircleDemo:
    """Sensitivity lower bound for the last circle row, evaluated in log space.

    With ``beta = (1 + eta, -1, 0)`` the last row has predictor ``eta`` and the
    others ``1 + eta - cos(2 pi i/n)``.  ``log_eta`` defaults to ``-n**2``.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    p = check_link_power(p)
    log_eta = -float(n) ** 2 if log_eta is None else float(log_eta)
    if log_eta >= 0:
        raise ValueError("log_eta must be negative")
    cost = float(_loss_terms_log(log_eta, 1, p))
    bound = cost / (cost + 8.0 * n * math.log(n))
    i = np.arange(1, n)
    # 1 - cos(t) = 2 sin(t/2)^2 keeps the near rows accurate
    z = 2.0 * np.sin(math.pi * i / n) ** 2 + math.exp(max(log_eta, -745.0))
    rest = float(np.sum(_loss_terms(z, np.ones(n - 1, dtype=np.int64), p)))
    denom = math.fsum([cost, rest])
    return CircleDemo(n, log_eta, cost, bound, denom, cost / denom)
