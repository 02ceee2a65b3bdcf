"""Unit-ball normalization, exact extreme points and direction-net eps-kernels.

All geometry is done on the non-intercept feature block.  Rows are identified
by their index in the input; exact duplicates are represented by the lowest
index among them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .model import Dataset

DEFAULT_MAX_DIRECTIONS = 8192
EXACT_MAX_N = 10_000
EXACT_ANY_N_MAX_DIM = 3
TIE_TOL = 1e-12


class HullBudgetExceeded(RuntimeError):
    """The exact hull is too expensive for this input; use ``eps_kernel`` instead."""


@dataclass(frozen=True)
class HullResult:
    indices: np.ndarray
    mode: str  # "exact" or "eps_kernel"
    eps: float
    scale_factor: float

    def __post_init__(self) -> None:
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size == 0:
            raise ValueError("hull must contain at least one row")
        if self.mode not in ("exact", "eps_kernel"):
            raise ValueError(f"unknown hull mode {self.mode!r}")
        if self.scale_factor < 1:
            raise ValueError("scale_factor must be >= 1")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("row_index\n")
            fh.writelines(f"{i}\n" for i in self.indices)

    @classmethod
    def read_indices(cls, path: str | Path) -> np.ndarray:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        return np.array([int(r[0]) for r in rows[1:] if r], dtype=np.int64)


def _features(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.features
    return np.asarray(data, dtype=float)


def normalize_unit_ball(data: Dataset) -> tuple[Dataset, float]:
    """Divide the features by ``c = max(1, max_i ||f_i||_2)``.

    With ``x_i = (1, f_i)`` and scaled rows ``(1, f_i / c)`` a parameter
    ``gamma`` found on the scaled data maps back through :func:`unscale_params`.
    """
    c = float(np.max(np.linalg.norm(data.features, axis=1)))
    c = max(c, 1.0)
    if c == 1.0:
        return data, 1.0
    return Dataset(data.features / c, data.labels), c


def unscale_params(gamma, c: float) -> np.ndarray:
    """Parameter on the original data with the same linear predictor."""
    beta = np.array(gamma, dtype=float)
    beta[1:] /= c
    return beta


def scale_params(beta, c: float) -> np.ndarray:
    gamma = np.array(beta, dtype=float)
    gamma[1:] *= c
    return gamma


def _distinct_rows(F: np.ndarray) -> np.ndarray:
    """Lowest index of each distinct row, ascending."""
    _, first = np.unique(F, axis=0, return_index=True)
    return np.sort(first)


def _lex_best(F: np.ndarray, rows: np.ndarray) -> int:
    """Lexicographic maximum over coordinates, ties to the lowest index."""
    if rows.size == 1:
        return int(rows[0])
    keys = [-rows] + [F[rows, j] for j in range(F.shape[1] - 1, -1, -1)]
    return int(rows[np.lexsort(keys)[-1]])


def _in_hull_lp(point: np.ndarray, others: np.ndarray) -> bool:
    """Is ``point`` a convex combination of the rows of ``others``?"""
    m = others.shape[0]
    A_eq = np.vstack([others.T, np.ones((1, m))])
    b_eq = np.concatenate([point, [1.0]])
    res = linprog(np.zeros(m), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 0


def _affine_coordinates(F: np.ndarray) -> np.ndarray:
    centre = F.mean(axis=0)
    C = F - centre
    _, s, vt = np.linalg.svd(C, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return C[:, :0]
    r = int(np.sum(s > 1e-12 * s[0]))
    return C @ vt[:r].T


def _candidates(P: np.ndarray) -> np.ndarray:
    """Positions in ``P`` that might be extreme: hull vertices plus near-boundary points."""
    n, r = P.shape
    if n <= r + 1:
        return np.arange(n)
    if r == 1:
        lo, hi = np.flatnonzero(P[:, 0] == P[:, 0].min()), np.flatnonzero(P[:, 0] == P[:, 0].max())
        return np.union1d(lo, hi)
    try:
        hull = ConvexHull(P)
    except QhullError:
        return np.arange(n)
    cand = set(hull.vertices.tolist())
    if hull.coplanar.size:
        cand.update(hull.coplanar[:, 0].tolist())
    scale = max(float(np.abs(P).max()), 1.0)
    tol = 1e-9 * scale
    eq = hull.equations
    rest = np.setdiff1d(np.arange(n), np.fromiter(cand, dtype=np.int64))
    for start in range(0, rest.size, 2048):
        block = rest[start:start + 2048]
        dist = P[block] @ eq[:, :-1].T + eq[:, -1]
        cand.update(block[dist.max(axis=1) > -tol].tolist())
    return np.array(sorted(cand), dtype=np.int64)


def extreme_points_exact(data, max_n: int | None = EXACT_MAX_N,
                         max_dim_any_n: int = EXACT_ANY_N_MAX_DIM) -> HullResult:
    """Rows that are not convex combinations of the other (distinct) rows.

    Qhull narrows the candidates; each candidate is then confirmed by a
    feasibility LP against the remaining candidates.  The budget applies when
    ``n > max_n`` and ``d > max_dim_any_n``; pass ``max_n=None`` to lift it.
    """
    if isinstance(data, Dataset):
        _, c = normalize_unit_ball(data)
        F = data.features
        d = data.d
    else:
        F = _features(data)
        c = max(1.0, float(np.max(np.linalg.norm(F, axis=1))))
        d = F.shape[1] + 1
    n = F.shape[0]
    if max_n is not None and n > max_n and d > max_dim_any_n:
        raise HullBudgetExceeded(
            f"exact hull of n={n} rows in d={d} exceeds the budget; use eps_kernel mode"
        )
    distinct = _distinct_rows(F)
    P = _affine_coordinates(F[distinct])
    if P.shape[1] == 0:
        return HullResult(distinct[:1], "exact", 0.0, c)
    cand = _candidates(P)
    if cand.size <= P.shape[1] + 1:
        keep = cand
    else:
        keep = [j for k, j in enumerate(cand)
                if not _in_hull_lp(P[j], P[np.delete(cand, k)])]
    return HullResult(distinct[np.asarray(keep, dtype=np.int64)], "exact", 0.0, c)


# ---------------------------------------------------------------------------
# direction nets
# ---------------------------------------------------------------------------

def _fibonacci_sphere(m: int) -> np.ndarray:
    i = np.arange(m) + 0.5
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _cube_product_net(k: int, per_axis: int) -> np.ndarray:
    """Grid points on every face of ``[-1, 1]^k``, projected to the sphere."""
    ticks = np.linspace(-1.0, 1.0, per_axis)
    grid = np.stack(np.meshgrid(*([ticks] * (k - 1)), indexing="ij"), axis=-1).reshape(-1, k - 1)
    faces = []
    for axis in range(k):
        for sign in (-1.0, 1.0):
            face = np.insert(grid, axis, sign, axis=1)
            faces.append(face)
    V = np.unique(np.vstack(faces), axis=0)
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def direction_net(k: int, eps: float, max_directions: int = DEFAULT_MAX_DIRECTIONS,
                  seed: int = 0) -> np.ndarray:
    """Unit directions in ``R^k`` with angular spacing about ``sqrt(eps)``.

    Circle for ``k = 2``, Fibonacci sphere for ``k = 3`` and a randomly rotated
    cube-face product grid above, always with the signed coordinate axes.
    When the cap keeps the grid coarser than the target spacing, the unused
    budget is filled with seeded random directions.
    """
    spacing = math.sqrt(eps)
    axes = np.vstack([np.eye(k), -np.eye(k)])
    if k == 1:
        return axes
    if k == 2:
        m = min(max(4, math.ceil(2 * math.pi / spacing)), max_directions)
        t = 2 * math.pi * np.arange(m) / m
        V = np.column_stack([np.cos(t), np.sin(t)])
    elif k == 3:
        # each Fibonacci point covers a cap of area about 4*pi/m
        m = min(max(8, math.ceil(4 * math.pi / spacing**2)), max_directions)
        V = _fibonacci_sphere(m)
    else:
        wanted = max(2, math.ceil(2.0 / spacing) + 1)
        per_axis = wanted
        while per_axis > 2 and 2 * k * per_axis ** (k - 1) > max_directions:
            per_axis -= 1
        V = _cube_product_net(k, per_axis)
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((k, k)))
        V = V @ (q * np.sign(np.diag(r))).T
        if per_axis < wanted and V.shape[0] < max_directions:
            # the grid could not reach the target spacing; spend the rest of the budget
            extra = rng.standard_normal((max(0, max_directions - 2 * k - V.shape[0]), k))
            V = np.vstack([V, extra / np.linalg.norm(extra, axis=1, keepdims=True)])
    return np.vstack([axes, V])


def eps_kernel(data, eps: float, max_directions: int = DEFAULT_MAX_DIRECTIONS,
               seed: int = 0) -> HullResult:
    """Per-direction maximizers over a net of unit directions.

    Near-ties are resolved lexicographically so every returned row is an
    extreme point.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if isinstance(data, Dataset):
        scaled, c = normalize_unit_ball(data)
        F = scaled.features
    else:
        F0 = _features(data)
        c = max(1.0, float(np.max(np.linalg.norm(F0, axis=1))))
        F = F0 / c
    V = direction_net(F.shape[1], eps, max_directions, seed)
    chosen: set[int] = set()
    for start in range(0, V.shape[0], 256):
        S = F @ V[start:start + 256].T
        top = S.max(axis=0)
        ties = S >= top - TIE_TOL
        counts = ties.sum(axis=0)
        arg = S.argmax(axis=0)
        chosen.update(arg[counts == 1].tolist())
        for j in np.flatnonzero(counts > 1):
            chosen.add(_lex_best(F, np.flatnonzero(ties[:, j])))
    return HullResult(np.array(sorted(chosen)), "eps_kernel", float(eps), c)


def compute_hull(data: Dataset, mode: str = "auto", eps: float = 0.05,
                 max_n: int | None = EXACT_MAX_N) -> HullResult:
    """``exact``, ``eps_kernel`` or ``auto`` (exact within budget, kernel otherwise)."""
    if mode == "exact":
        return extreme_points_exact(data, max_n=max_n)
    if mode == "eps_kernel":
        return eps_kernel(data, eps)
    if mode != "auto":
        raise ValueError(f"unknown hull mode {mode!r}")
    try:
        return extreme_points_exact(data, max_n=max_n)
    except HullBudgetExceeded:
        return eps_kernel(data, eps)


def constraint_margin(hull: HullResult, eps: float | None = None) -> float:
    """Margin for the hull constraints: ``eps`` for exact hulls, ``2 eps`` for kernels."""
    if eps is None:
        if hull.mode == "exact":
            raise ValueError("an exact hull carries no eps; pass it explicitly")
        eps = hull.eps
    return float(eps) if hull.mode == "exact" else 2.0 * float(eps)
