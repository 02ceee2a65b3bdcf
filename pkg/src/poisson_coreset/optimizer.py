"""Barrier Newton minimization of the weighted loss over a shifted domain.

Hull rows are held at ``x_i beta > eta`` by logarithmic barriers; rows with a
zero count get a barrier at zero because their loss term ``z**p`` does not
bar the boundary by itself.  All work happens on unit-ball scaled features and
the result is mapped back to the original scale.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .hull import scale_params, unscale_params
from .model import (
    Dataset,
    Infeasible,
    _loss_terms,
    check_link_power,
    point_derivatives,
    random_feasible_beta,
    rows_loss,
)

STRICT_SLACK = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float = 0.05
    barrier_mu: float = 1.0
    barrier_decay: float = 0.2
    mu_min: float = 1e-12
    newton_tol: float = 1e-8
    max_outer: int = 40
    max_inner: int = 100
    ls_backtrack: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0 < self.barrier_decay < 1 or not 0 < self.ls_backtrack < 1:
            raise ValueError("decay factors must lie in (0, 1)")
        if min(self.barrier_mu, self.newton_tol, self.mu_min) <= 0:
            raise ValueError("barrier weight and tolerances must be positive")


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    objective: float
    outer_iterations: int
    newton_iterations: int
    converged: bool
    kkt_residual: float
    history: tuple = ()
    feasible_full_data: bool | None = None
    full_margin: float | None = None

    def with_full_data(self, X: np.ndarray) -> "FitResult":
        margin = float(np.min(X @ self.beta))
        return replace(self, feasible_full_data=margin > 0, full_margin=margin)

    def to_json_line(self) -> str:
        rec = asdict(self)
        rec["beta"] = [float(b) for b in self.beta]
        rec["history"] = [float(h) for h in self.history]
        return json.dumps(rec, sort_keys=True)


# ---------------------------------------------------------------------------
# feasible initialization
# ---------------------------------------------------------------------------

def feasible_start(rows, eta: float, radius: float = 1.0, iterations: int = 300) -> np.ndarray | Infeasible:
    """Maximize ``min_i x_i beta`` over ``||beta||_2 <= radius`` by softmin ascent.

    Starts from ``radius * e_1`` (margin equal to ``radius``) and anneals the
    softmin temperature.  Returns the best parameter if its margin exceeds
    ``eta``, otherwise an :class:`Infeasible` carrying the best margin found.
    """
    X = np.asarray(rows, dtype=float)
    beta = np.zeros(X.shape[1])
    beta[0] = radius
    best, best_margin = beta.copy(), float(np.min(X @ beta))
    temps = radius * np.geomspace(0.1, 1e-4, iterations)
    steps = radius * np.geomspace(0.1, 1e-4, iterations)
    for T, step in zip(temps, steps):
        z = X @ beta
        a = -(z - z.min()) / T
        wts = np.exp(a)
        wts /= wts.sum()
        g = X.T @ wts
        norm = np.linalg.norm(g)
        if norm == 0:
            break
        beta = beta + step * g / norm
        beta *= min(1.0, radius / np.linalg.norm(beta))
        m = float(np.min(X @ beta))
        if m > best_margin:
            best, best_margin = beta.copy(), m
    if best_margin > eta + STRICT_SLACK:
        return best
    return Infeasible(best_margin, int(np.argmin(X @ best)))


# ---------------------------------------------------------------------------
# barrier Newton
# ---------------------------------------------------------------------------

class _Problem:
    def __init__(self, X, y, w, p, hull, eta):
        self.X, self.y, self.w, self.p, self.eta = X, y, w, p, eta
        self.hull = np.asarray(hull, dtype=np.int64)
        self.zero = np.flatnonzero(y == 0)

    def feasible(self, beta) -> bool:
        z = self.X @ beta
        if not np.all(z > 0):
            return False
        return self.hull.size == 0 or bool(np.all(z[self.hull] - self.eta > STRICT_SLACK))

    def loss(self, z) -> float:
        return float(np.sum(self.w * _loss_terms(z, self.y, self.p)))

    def value(self, beta, mu) -> float:
        z = self.X @ beta
        v = self.loss(z)
        if self.hull.size:
            v -= mu * np.sum(np.log(z[self.hull] - self.eta))
        if self.zero.size:
            v -= mu * np.sum(np.log(z[self.zero]))
        return v

    def grad_hess(self, beta, mu):
        X = self.X
        z = X @ beta
        g1, g2 = point_derivatives(self.y, z, self.p)
        c1 = self.w * g1
        c2 = self.w * g2
        for idx, shift in ((self.hull, self.eta), (self.zero, 0.0)):
            if idx.size:
                s = z[idx] - shift
                np.add.at(c1, idx, -mu / s)
                np.add.at(c2, idx, mu / s**2)
        return X.T @ c1, (X * c2[:, None]).T @ X


def _newton_direction(g, H):
    try:
        L = np.linalg.cholesky(H)
        return -np.linalg.solve(L.T, np.linalg.solve(L, g))
    except np.linalg.LinAlgError:
        ridge = 1e-12 * max(np.trace(H), 1.0)
        return -np.linalg.lstsq(H + ridge * np.eye(H.shape[0]), g, rcond=None)[0]


def _minimize_scaled(prob: _Problem, beta, cfg: OptimizerConfig):
    mu = cfg.barrier_mu
    history, newton_total, outer = [], 0, 0
    grad_scale = max(1.0, float(np.sum(prob.w)))
    residual = math.inf
    converged = False
    while outer < cfg.max_outer:
        outer += 1
        inner_ok = False
        for _ in range(cfg.max_inner):
            g, H = prob.grad_hess(beta, mu)
            residual = float(np.linalg.norm(g)) / grad_scale
            if residual <= cfg.newton_tol:
                inner_ok = True
                break
            step = _newton_direction(g, H)
            slope = float(g @ step)
            if slope >= 0:
                step, slope = -g, -float(g @ g)
            f0 = prob.value(beta, mu)
            t = 1.0
            while t > 1e-20:
                cand = beta + t * step
                if prob.feasible(cand) and prob.value(cand, mu) <= f0 + cfg.armijo * t * slope:
                    break
                t *= cfg.ls_backtrack
            else:
                break
            newton_total += 1
            if np.array_equal(cand, beta):
                inner_ok = True
                break
            beta = cand
        history.append(prob.loss(prob.X @ beta))
        if mu <= cfg.mu_min:
            converged = inner_ok
            break
        mu = max(mu * cfg.barrier_decay, cfg.mu_min)
    return beta, history, outer, newton_total, converged, residual


def minimize(rows, labels, weights=None, p: int = 1, config: OptimizerConfig | None = None,
             hull_indices=(), start=None) -> FitResult:
    """Minimize ``sum_i w_i g_{y_i}(x_i beta)`` with ``x_h beta > eta`` on the hull rows.

    ``rows`` include the intercept column; ``hull_indices`` index into them.
    Objective and parameter refer to the original (unscaled) rows.
    """
    p = check_link_power(p)
    cfg = config or OptimizerConfig()
    X = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    c = max(1.0, float(np.max(np.linalg.norm(X[:, 1:], axis=1)))) if X.shape[1] > 1 else 1.0
    Xs = X.copy()
    Xs[:, 1:] /= c
    prob = _Problem(Xs, y, w, p, hull_indices, cfg.eta)
    if start is None:
        gamma = feasible_start(Xs, cfg.eta, radius=2.0 * (1.0 + cfg.eta))
        if isinstance(gamma, Infeasible):
            raise RuntimeError(f"no feasible start at eta={cfg.eta}: best margin {gamma.min_value}")
    else:
        gamma = scale_params(start, c)
    if not prob.feasible(gamma):
        raise ValueError("start point is not strictly feasible")
    gamma, history, outer, newton, converged, residual = _minimize_scaled(prob, gamma, cfg)
    beta = unscale_params(gamma, c)
    obj = rows_loss(X, y, beta, w, p)
    if isinstance(obj, Infeasible):
        # the scaled iterate was feasible; rounding in the back-scaling broke it
        obj = prob.loss(Xs @ gamma)
    return FitResult(beta, float(obj), outer, newton, converged, residual, tuple(history))


def fit_dataset(data: Dataset, p: int, config: OptimizerConfig | None = None, hull_indices=()) -> FitResult:
    return minimize(data.X, data.labels, None, p, config, hull_indices)


# ---------------------------------------------------------------------------
# domain shift inequality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftReport:
    p: int
    passed: bool
    worst_slack: float  # smallest (bound - shifted loss) / (eta * f + eta**p * n)
    tightest_constant: float  # largest (f' - f - eta**p n) / (eta f)
    trials: int
    records: list = field(default_factory=list)


def shift_increment(X, y, beta, eta: float, p: int) -> float:
    """``f(X(beta + eta e_1)) - f(X beta)`` summed termwise without cancellation."""
    z = X @ beta
    yf = np.asarray(y, dtype=float)
    if p == 1:
        return float(np.sum(eta - yf * np.log1p(eta / z)))
    return float(np.sum(2 * eta * z + eta**2 - 2 * yf * np.log1p(eta / z)))


def shift_bound_slack(X, y, beta, eta: float, p: int) -> tuple[float, float, float]:
    """(slack, normaliser, observed constant) for the shift inequality at one ``beta``."""
    n = X.shape[0]
    f = rows_loss(X, y, beta, None, p)
    inc = shift_increment(X, y, beta, eta, p)
    C = 0.0 if p == 1 else 6.0
    slack = eta**p * n + C * eta * f - inc
    norm = eta * f + eta**p * n
    const = (inc - eta**p * n) / (eta * f) if eta > 0 else 0.0
    return slack, norm, const


def shift_gap_check(data, p: int, eta_grid, trials: int = 100, seed: int = 0) -> ShiftReport:
    """Check the shift inequality on random feasible parameters.

    ``data`` is a dataset or a sequence of datasets; trial ``t`` uses
    ``data[t % len(data)]`` and ``eta_grid[t % len(eta_grid)]``.
    """
    p = check_link_power(p)
    sets = [data] if isinstance(data, Dataset) else list(data)
    grid = list(eta_grid)
    rng = np.random.default_rng(seed)
    worst, tight, records = math.inf, -math.inf, []
    for t in range(trials):
        ds = sets[t % len(sets)]
        eta = float(grid[t % len(grid)])
        beta = random_feasible_beta(ds.features, rng)
        slack, norm, const = shift_bound_slack(ds.X, ds.labels, beta, eta, p)
        rel = slack / norm if norm > 0 else slack
        worst = min(worst, rel)
        tight = max(tight, const)
        records.append((t, eta, rel, const))
    return ShiftReport(p, worst >= 0, worst, tight, trials, records)
