"""Weighted coresets: hull rows at weight one plus an importance-weighted sample."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditioning import SensitivityScores, conditioned_basis, sensitivity_scores
from .hull import HullResult
from .model import Dataset, Infeasible, check_link_power, rows_loss, total_loss


@dataclass(frozen=True)
class Coreset:
    """``hull_count`` leading weight-one rows followed by ``k`` sampled rows.

    ``rows`` include the intercept column.  ``source`` holds the index of each
    row in the original data.
    """

    rows: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    hull_count: int
    seed: int
    k: int
    source: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.rows.shape[0] != self.hull_count + self.k:
            raise ValueError("coreset size must equal hull_count + k")
        if self.labels.shape[0] != self.rows.shape[0] or self.weights.shape[0] != self.rows.shape[0]:
            raise ValueError("rows, labels and weights disagree in length")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        if np.any(self.weights[: self.hull_count] != 1.0):
            raise ValueError("hull rows must carry weight 1")

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def loss(self, beta, p: int) -> float | Infeasible:
        return rows_loss(self.rows, self.labels, beta, self.weights, p)

    def to_csv(self, path: str | Path) -> None:
        d = self.rows.shape[1]
        with open(path, "w", newline="") as fh:
            fh.write(f"# hull_count={self.hull_count} seed={self.seed} k={self.k}\n")
            fh.write(",".join(["w"] + [f"f{j}" for j in range(1, d)] + ["y"]) + "\n")
            for w, x, y in zip(self.weights, self.rows, self.labels):
                fh.write(",".join([repr(float(w))] + [repr(float(v)) for v in x[1:]] + [str(int(y))]) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "Coreset":
        with open(path) as fh:
            header = fh.readline()
            m = re.match(r"#\s*hull_count=(\d+)\s+seed=(-?\d+)\s+k=(\d+)", header)
            if not m:
                raise ValueError(f"{path}: missing '# hull_count= seed= k=' header")
            fh.readline()
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        rows = np.hstack([np.ones((body.shape[0], 1)), body[:, 1:-1]])
        return cls(rows, body[:, -1].astype(np.int64), body[:, 0], int(m[1]), int(m[2]), int(m[3]))


def _split(data: Dataset, hull: HullResult | None) -> tuple[np.ndarray, np.ndarray]:
    if hull is None:
        return np.array([], dtype=np.int64), np.arange(data.n)
    hull_idx = np.asarray(hull.indices, dtype=np.int64)
    rest = np.setdiff1d(np.arange(data.n), hull_idx)
    return hull_idx, rest


def remainder_scores(data: Dataset, p: int, hull: HullResult | None, seed: int = 0,
                     refine: bool = False) -> SensitivityScores | None:
    """Sensitivity scores on the rows outside the hull (``None`` if too few remain)."""
    _, rest = _split(data, hull)
    if rest.size < data.d:
        return None
    basis = conditioned_basis(data.X[rest], p, seed=seed, refine=refine)
    return sensitivity_scores(basis)


def _assemble(data: Dataset, hull_idx: np.ndarray, drawn: np.ndarray, draw_w: np.ndarray,
              seed: int) -> Coreset:
    src = np.concatenate([hull_idx, drawn]).astype(np.int64)
    X = data.X
    weights = np.concatenate([np.ones(hull_idx.size), draw_w])
    return Coreset(X[src], data.labels[src].copy(), weights, int(hull_idx.size), int(seed),
                   int(drawn.size), src)


def build_coreset(data: Dataset, p: int, k: int, seed: int, hull: HullResult | None,
                  scores: SensitivityScores | None = None) -> Coreset:
    """Hull rows at weight 1 and ``k`` i.i.d. draws with ``p_i = s_i / S``, weight ``1/(k p_i)``.

    ``scores`` must be indexed like the non-hull rows in ascending order.  When
    they are omitted they are computed with :func:`remainder_scores`.
    """
    check_link_power(p)
    if k < 1:
        raise ValueError("k must be at least 1")
    hull_idx, rest = _split(data, hull)
    if rest.size == 0:
        return _assemble(data, hull_idx, rest, np.empty(0), seed)
    if scores is None:
        scores = remainder_scores(data, p, hull, seed)
        if scores is None:
            scores = SensitivityScores.from_scores(np.ones(rest.size))
    if scores.s.shape[0] != rest.size:
        raise ValueError(f"{scores.s.shape[0]} scores for {rest.size} non-hull rows")
    rng = np.random.default_rng(seed)
    pick = rng.choice(rest.size, size=k, replace=True, p=scores.probabilities)
    return _assemble(data, hull_idx, rest[pick], 1.0 / (k * scores.probabilities[pick]), seed)


def build_uniform(data: Dataset, k: int, seed: int, hull: HullResult | None = None,
                  with_hull: bool = False) -> Coreset:
    """Uniform i.i.d. baseline.

    By default no hull rows are kept and all ``n`` rows are eligible, each draw
    weighted ``n/k``.  With ``with_hull`` the hull rows are carried at weight 1
    and the ``k`` draws come from the remaining rows at weight ``(n - h)/k``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if with_hull and hull is None:
        raise ValueError("with_hull needs a hull")
    hull_idx, rest = _split(data, hull if with_hull else None)
    if rest.size == 0:
        return _assemble(data, hull_idx, rest, np.empty(0), seed)
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, rest.size, size=k)
    return _assemble(data, hull_idx, rest[pick], np.full(k, rest.size / k), seed)


@dataclass(frozen=True)
class CoresetError:
    max_error: float
    errors: np.ndarray
    skipped: int


def coreset_error(data: Dataset, coreset: Coreset, p: int, beta_set) -> CoresetError:
    """``max |f(X beta) - f_w(C beta)| / f(X beta)`` over the feasible ``beta``."""
    errs, skipped = [], 0
    for beta in beta_set:
        full = total_loss(data, beta, p=p)
        red = coreset.loss(beta, p)
        if isinstance(full, Infeasible) or isinstance(red, Infeasible) or full <= 0:
            skipped += 1
            continue
        errs.append(abs(full - red) / full)
    errs = np.array(errs)
    return CoresetError(float(errs.max()) if errs.size else float("nan"), errs, skipped)


def total_sensitivity_bound(rho: float, d: int, y_max: int, eta: float, p: int) -> float:
    """Order-of-magnitude total sensitivity with all hidden constants set to one."""
    p = check_link_power(p)
    ly = math.log(max(y_max, 3))
    loglog = math.log(max(math.log(1.0 / eta), 1.0))
    if p == 1:
        return rho * d * math.sqrt(max(y_max, 3) / ly) + loglog
    return rho * d + ly + loglog


def theoretical_size(eps: float, delta: float, rho: float, y_max: int, d: int, n: int,
                     p: int, eta: float | None = None) -> int:
    """Sample size ``S/eps^2 (Delta log S + log 1/delta)`` with unit constants.

    Informational only: the constants behind the asymptotic bound are not
    known, so this number is neither necessary nor sufficient in practice.
    """
    eta = eps if eta is None else eta
    S = max(total_sensitivity_bound(rho, d, y_max, eta, p), math.e)
    vc = d * min(d, math.log(max(n, 2)) * math.log(max(y_max, 2)) / eps)
    return int(math.ceil(S / eps**2 * (vc * math.log(S) + math.log(1.0 / delta))))
