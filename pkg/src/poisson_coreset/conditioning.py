"""Well-conditioned representations of span(X) and sensitivity upper bounds.

For ``p = 2`` the data are sketched with a sparse sign embedding and
``Q = X R^-1`` is formed from the QR factor of the sketch.  For ``p = 1`` the
same ``R`` is used, columns are rescaled to unit l1 norm, and the l1
conditioning constants are measured and reported with the basis.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .model import Dataset, check_link_power, random_feasible_beta

SKETCH_ROWS_PER_D2 = 4
RANK_RTOL = 1e-10
MAX_SKETCH_RETRIES = 3


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ConditionedBasis:
    """``Q`` spans the columns of ``X``; ``alpha = ||Q||_p``, ``gamma`` is the measured distortion."""

    Q: np.ndarray
    alpha: float
    gamma: float
    p: int
    R: np.ndarray  # X = Q @ R
    distortion: float  # max/min of ||Qz||_p / ||z||_q over the probes
    sketch_rows: int = 0


@dataclass(frozen=True)
class SensitivityScores:
    s: np.ndarray
    total: float
    probabilities: np.ndarray

    @classmethod
    def from_scores(cls, s) -> "SensitivityScores":
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ValueError("sensitivity scores must be positive")
        total = float(s.sum())
        return cls(s, total, s / total)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "score", "probability"])
            for i, (s, q) in enumerate(zip(self.s, self.probabilities)):
                w.writerow([i, repr(float(s)), repr(float(q))])


def _design(data) -> np.ndarray:
    return data.X if isinstance(data, Dataset) else np.asarray(data, dtype=float)


def sparse_embedding(A: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """``Pi @ A`` for a CountSketch ``Pi``: each row lands in one bucket with a random sign."""
    n = A.shape[0]
    bucket = rng.integers(0, m, size=n)
    sign = rng.choice(np.array([-1.0, 1.0]), size=n)
    out = np.zeros((m, A.shape[1]))
    np.add.at(out, bucket, sign[:, None] * A)
    return out


def _sketch_r(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(MAX_SKETCH_RETRIES + 1):
        SX = sparse_embedding(X, m, rng)
        R = scipy.linalg.qr(SX, mode="r")[0][: X.shape[1]]
        diag = np.abs(np.diag(R))
        if diag.min() > RANK_RTOL * max(diag.max(), 1e-300):
            # fix signs so the factor is unique
            return R * np.sign(np.diag(R))[:, None]
    raise RankDeficientError(
        f"sketched design has rank < {X.shape[1]} after {MAX_SKETCH_RETRIES} retries"
    )


def sketch_rows_for(d: int, c: int = SKETCH_ROWS_PER_D2) -> int:
    return c * d * d


def sketch_qr_basis_p2(data, seed: int = 0, sketch_factor: int = SKETCH_ROWS_PER_D2) -> ConditionedBasis:
    X = _design(data)
    n, d = X.shape
    if n < d:
        raise RankDeficientError(f"{n} rows cannot have column rank {d}")
    m = sketch_rows_for(d, sketch_factor)
    rng = np.random.default_rng(seed)
    R = _sketch_r(X, m, rng)
    Q = scipy.linalg.solve_triangular(R, X.T, trans="T", lower=False).T
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= 0:
        raise RankDeficientError("X is rank deficient")
    alpha = float(np.linalg.norm(Q))
    return ConditionedBasis(Q, alpha, float(1.0 / sv[-1]), 2, R, float(sv[0] / sv[-1]), m)


def _l1_gamma(Q: np.ndarray, rng: np.random.Generator, probes: int) -> tuple[float, float]:
    s = Q.shape[1]
    Z = np.vstack([np.eye(s), rng.standard_normal((probes, s))])
    ratio = np.abs(Z @ Q.T).sum(axis=1) / np.abs(Z).max(axis=1)
    return float(1.0 / ratio.min()), float(ratio.max() / ratio.min())


def lewis_weights_l1(X: np.ndarray, iterations: int = 30) -> np.ndarray:
    """l1 Lewis weights by the fixed point ``w_i = sqrt(x_i^T (X^T W^-1 X)^-1 x_i)``."""
    n, d = X.shape
    w = np.full(n, d / n)
    for _ in range(iterations):
        M = (X / w[:, None]).T @ X
        try:
            L = np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise RankDeficientError("X is rank deficient") from exc
        lev = np.sum(scipy.linalg.solve_triangular(L, X.T, lower=True) ** 2, axis=0)
        w = np.sqrt(lev)
    return w


def l1_basis(data, seed: int = 0, refine: bool = False, probes: int = 1000,
             sketch_factor: int = SKETCH_ROWS_PER_D2) -> ConditionedBasis:
    """l1-conditioned surrogate: sketch-QR basis with unit-l1 columns.

    With ``refine`` the change of basis comes from l1 Lewis weights instead of
    the sketch.  ``gamma`` is measured on the standard basis plus ``probes``
    random directions, so it is at least 1.
    """
    X = _design(data)
    n, d = X.shape
    if n < d:
        raise RankDeficientError(f"{n} rows cannot have column rank {d}")
    rng = np.random.default_rng(seed)
    m = sketch_rows_for(d, sketch_factor)
    if refine:
        w = lewis_weights_l1(X)
        M = (X / w[:, None]).T @ X
        evals, evecs = np.linalg.eigh(M)
        if evals.min() <= RANK_RTOL * evals.max():
            raise RankDeficientError("X is rank deficient")
        R = (evecs * np.sqrt(evals)) @ evecs.T
        m = 0
    else:
        R = _sketch_r(X, m, rng)
    Q = scipy.linalg.solve(R.T, X.T).T if refine else scipy.linalg.solve_triangular(R, X.T, trans="T").T
    col = np.abs(Q).sum(axis=0)
    Q = Q / col
    R = R * col[:, None]
    gamma, distortion = _l1_gamma(Q, rng, probes)
    return ConditionedBasis(Q, float(np.abs(Q).sum()), gamma, 1, R, distortion, m)


def conditioned_basis(data, p: int, seed: int = 0, refine: bool = False) -> ConditionedBasis:
    p = check_link_power(p)
    if p == 2:
        return sketch_qr_basis_p2(data, seed)
    return l1_basis(data, seed, refine=refine)


def sensitivity_scores(basis: ConditionedBasis) -> SensitivityScores:
    """``s_i = ||Q_i||_p^p + 1/n``."""
    n = basis.Q.shape[0]
    row = np.sum(np.abs(basis.Q) ** basis.p, axis=1)
    return SensitivityScores.from_scores(row + 1.0 / n)


@dataclass(frozen=True)
class RhoEstimate:
    """Running maximum of the complexity ratio over sampled feasible parameters.

    This is a lower bound on the supremum, never the supremum itself.
    """

    value: float
    running_max: np.ndarray
    skipped: int


def complexity_ratio(X: np.ndarray, y: np.ndarray, beta: np.ndarray, p: int) -> float:
    z = X @ beta
    num = np.sum(np.abs(z) ** p)
    den = np.sum(np.abs(z - np.asarray(y, dtype=float) ** (1.0 / p)) ** p)
    return float(num / den) if den > 0 else float("nan")


def rho_estimate(data: Dataset, p: int, trials: int = 200, seed: int = 0, extra_betas=()) -> RhoEstimate:
    """Sample feasible parameters and keep the largest complexity ratio seen.

    Trial ``t`` depends only on ``(seed, t)``, so a longer run extends a
    shorter one and the estimate is nondecreasing in ``trials``.
    """
    p = check_link_power(p)
    X, y = data.X, data.labels
    F = data.features
    rng = np.random.default_rng(seed)
    best = -np.inf
    skipped = 0
    history = []
    candidates = [np.asarray(b, dtype=float) for b in extra_betas]
    for _ in range(trials):
        beta = random_feasible_beta(F, rng)
        r = complexity_ratio(X, y, beta, p)
        if np.isnan(r):
            skipped += 1
        else:
            best = max(best, r)
        history.append(best)
    for beta in candidates:
        if np.min(X @ beta) > 0:
            r = complexity_ratio(X, y, beta, p)
            if not np.isnan(r):
                best = max(best, r)
    return RhoEstimate(float(best), np.array(history), skipped)
