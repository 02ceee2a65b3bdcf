"""Closed-form bounds on the per-point Poisson loss.

Everything here is checked numerically rather than assumed: each ``*_check``
function evaluates an inequality on a grid and reports the worst slack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import _loss_terms, check_link_power, min_value, point_derivatives

E_HI = math.e
# e - float(e), so that E_HI + E_LO carries e to ~32 digits
E_LO = 1.4456468917292502e-16
INV_E = 1.0 / math.e
BRANCH_CLAMP = 1e-15


@dataclass(frozen=True)
class CheckReport:
    """Outcome of one grid check; ``worst_slack`` < 0 means a violation."""

    check: str
    passed: bool
    worst_slack: float
    y: float = float("nan")
    p: int = 0
    param: float = float("nan")
    points: int = 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.check} y={self.y:g} p={self.p} param={self.param:g} "
            f"points={self.points} worst_slack={self.worst_slack:.3e}"
        )


def log_grid(lo: float, hi: float, num: int, *, include_lo: bool = False) -> np.ndarray:
    """``num`` log-spaced points in ``(lo, hi]`` (or ``[lo, hi]``)."""
    if include_lo:
        return np.geomspace(lo, hi, num)
    return np.geomspace(lo, hi, num + 1)[1:]


# ---------------------------------------------------------------------------
# cost lower bound and the p=1 slope
# ---------------------------------------------------------------------------

def cost_lower_bound(y: int, z, p: int = 1):
    """``max{1, (1 + p*log z)/3}``; a lower bound on ``g_y(z)`` for ``y >= 1``."""
    if y < 1:
        raise ValueError("the cost lower bound needs y >= 1")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be positive")
    out = np.maximum(1.0, (1.0 + p * np.log(z)) / 3.0)
    return out if out.ndim else float(out)


def lambda_p1(y: int) -> float:
    """Slope divisor making ``(z - y)/lambda <= g_y(z)`` for ``z > y`` when ``p = 1``."""
    if y < 1:
        raise ValueError("lambda_p1 needs y >= 1")
    lb = max(1.0, (1.0 + math.log(y)) / 3.0)
    return 0.5 * (math.sqrt(4.0 * y / lb + 1.0) + 1.0)


def envelope_lambda(y: int, p: int) -> float:
    p = check_link_power(p)
    if p == 2 or y == 0:
        return 1.0
    return lambda_p1(y)


@dataclass(frozen=True)
class EnvelopeParams:
    lambda_: float
    tau: float
    p: int

    def __post_init__(self) -> None:
        if self.lambda_ < 1:
            raise ValueError("lambda must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")

    @classmethod
    def for_label(cls, y: int, p: int) -> "EnvelopeParams":
        return cls(envelope_lambda(y, p), float(y) ** (1.0 / p), p)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return (z - self.tau) ** self.p / self.lambda_


def envelope_sandwich_check(y: int, p: int, z_grid, tol: float = 1e-9) -> CheckReport:
    """Check ``(z - tau)**p / lambda <= g_y(z) <= z**p`` on a grid above ``tau``.

    Slack is relative to ``g_y(z)``.
    """
    p = check_link_power(p)
    env = EnvelopeParams.for_label(y, p)
    z = np.asarray(z_grid, dtype=float)
    if np.any(z <= env.tau):
        raise ValueError(f"all grid points must exceed y**(1/p) = {env.tau}")
    g = _loss_terms(z, np.full(z.shape, y), p)
    lower = (g - env(z)) / g
    upper = (z**p - g) / g
    worst = float(min(lower.min(), upper.min()))
    return CheckReport("envelope_sandwich", worst >= -tol, worst, y, p, env.lambda_, z.size)


# ---------------------------------------------------------------------------
# Lambert W, principal branch
# ---------------------------------------------------------------------------

def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def branch_offset(x):
    """``1 + e*x`` without the cancellation near ``x = -1/e``.

    ``e*x`` is formed as an error-free product, ``1 + hi`` is exact there
    (Sterbenz), and the low-order parts are added afterwards.
    """
    x = np.asarray(x, dtype=float)
    prod = E_HI * x
    eh, el = _split(E_HI)
    xh, xl = _split(x)
    err = ((eh * xh - prod) + eh * xl + el * xh) + el * xl
    return (1.0 + prod) + (err + E_LO * x)


_PHI_COEFS = np.array([(k - 1) / math.factorial(k) for k in range(32, 1, -1)])


def _phi(v):
    """``1 - (1 - v)*exp(v)`` as its power series (exact to rounding on [0, 1])."""
    acc = np.zeros_like(v)
    for c in _PHI_COEFS:
        acc = acc * v + c
    return acc * v * v


def _w0_plus_one_from_offset(t):
    """Solve ``1 - (1 - v) e^v = t`` for ``v = W0(x) + 1`` with ``t = 1 + e*x``."""
    t = np.asarray(t, dtype=float)
    v = np.sqrt(2.0 * t) - 2.0 * t / 3.0
    v = np.clip(v, 0.0, 1.0)
    for _ in range(40):
        ev = np.exp(v)
        f = _phi(v) - t
        f1 = v * ev
        f2 = (1.0 + v) * ev
        denom = 2.0 * f1 * f1 - f * f2
        step = np.where(denom != 0, 2.0 * f * f1 / np.where(denom != 0, denom, 1.0), 0.0)
        v = np.clip(v - step, 0.0, 1.0)
        if np.all(np.abs(step) <= 1e-16 * np.maximum(v, 1e-300)):
            break
    return np.where(t <= 0, 0.0, v)


def _w0_halley(x):
    x = np.asarray(x, dtype=float)
    big = x > 3.0
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.log(np.where(big, x, 3.0))
        l2 = np.log(l1)
        w = np.where(big, l1 - l2 + l2 / l1, np.log1p(x))
    for _ in range(60):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w = w - step
        if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(w))):
            break
    return w


# switch to the branch-point solver when 1 + e*x is below this
_BRANCH_REGION = 0.25


def lambert_w0(x):
    """Principal branch ``W0`` of the Lambert function, ``W0(x) * exp(W0(x)) = x``.

    Arguments down to ``-1/e - 1e-15`` are clamped onto the branch point.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(x_arr)):
        raise ValueError("lambert_w0 got NaN")
    t = branch_offset(x_arr)
    if np.any(x_arr < -INV_E - BRANCH_CLAMP):
        raise ValueError("lambert_w0 is real only for x >= -1/e")
    t = np.maximum(t, 0.0)
    near = t < _BRANCH_REGION
    out = np.empty(x_arr.shape, dtype=float)
    if np.any(near):
        out[near] = _w0_plus_one_from_offset(t[near]) - 1.0
    if np.any(~near):
        out[~near] = _w0_halley(x_arr[~near])
    out[x_arr == 0] = 0.0
    return out if out.ndim else float(out)


def lambert_residual(x):
    """``|W0(x) exp(W0(x)) - x| / max(1, |x|)``."""
    x = np.asarray(x, dtype=float)
    w = lambert_w0(x)
    return np.abs(w * np.exp(w) - x) / np.maximum(1.0, np.abs(x))


def lambert_bounds(x):
    """``(sqrt(1 + e x) - 1, sqrt(2 (1 + e x)) - 1)`` bracketing ``W0`` on ``[-1/e, 0)``."""
    t = np.maximum(branch_offset(x), 0.0)
    return np.sqrt(t) - 1.0, np.sqrt(2.0 * t) - 1.0


def lambert_bounds_check(x_grid, tol: float = 1e-12) -> CheckReport:
    """Square-root bracket on ``[-1/e, 0)``; absolute slack."""
    x = np.asarray(x_grid, dtype=float)
    if np.any(x >= 0) or np.any(x < -INV_E - BRANCH_CLAMP):
        raise ValueError("grid must lie in [-1/e, 0)")
    t = np.maximum(branch_offset(x), 0.0)
    lo, hi = np.sqrt(t) - 1.0, np.sqrt(2.0 * t) - 1.0
    v = _w0_plus_one_from_offset(t)
    # compare W0 + 1 against the bounds + 1 to keep the tiny offsets exact
    w = lambert_w0(x)
    slack_lo = np.where(t < _BRANCH_REGION, v - np.sqrt(t), w - lo)
    slack_hi = np.where(t < _BRANCH_REGION, np.sqrt(2.0 * t) - v, hi - w)
    worst = float(min(slack_lo.min(), slack_hi.min()))
    return CheckReport("lambert_bounds", worst >= -tol, worst, points=x.size)


# ---------------------------------------------------------------------------
# tight tangency slope for p = 1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TangencyResult:
    lambda_star: float
    z_star: float
    residual_value: float
    residual_slope: float
    argument: float


def lambda_star(y: int) -> TangencyResult:
    """Smallest ``lambda`` with ``(z - y)/lambda`` tangent to ``g_y`` (``p = 1``).

    ``lambda* = 1 / (W0(-y e^-2 / (y!)^(1/y)) + 1)``.  The argument is close
    to ``-1/e`` for large ``y``; ``1 + e*arg = -expm1(-m(y)/y)`` with
    ``m(y) = y - y log y + log y!`` is computed directly so ``W0 + 1`` keeps
    full relative accuracy.
    """
    if y < 1 or int(y) != y:
        raise ValueError("lambda_star needs an integer y >= 1")
    m = min_value(int(y))
    t = -math.expm1(-m / y)
    v = float(_w0_plus_one_from_offset(np.array([t]))[0])
    lam = 1.0 / v
    z = y / (1.0 - v)
    g = float(_loss_terms(np.array([z]), np.array([y]), 1)[0])
    h = (z - y) * v
    g1, _ = point_derivatives(y, z, 1)
    argument = -math.exp(math.log(y) - 2.0 - (m - y + y * math.log(y)) / y)
    return TangencyResult(lam, z, abs(g - h), abs(float(g1) - v), argument)


def lambda_star_bracket(y: int) -> tuple[float, float]:
    """Growth bracket ``[sqrt(y/(2 log 2 pi y)), sqrt(26 y/(6 log 2 pi y))]``."""
    L = math.log(2.0 * math.pi * y)
    return math.sqrt(y / (2.0 * L)), math.sqrt(26.0 * y / (6.0 * L))


# ---------------------------------------------------------------------------
# label rounding
# ---------------------------------------------------------------------------

def rounding_check(y: int, y_prime: int, eps: float, z_grid, p: int = 1) -> CheckReport:
    """``(1 - 3 eps) g_y <= g_y' <= (1 + 3 eps) g_y`` on the grid; slack relative to ``g_y``."""
    p = check_link_power(p)
    if y < 8:
        raise ValueError("rounding bound needs y >= 8")
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if int(y_prime) != y_prime or not y < y_prime <= (1.0 + eps) * y:
        raise ValueError("need an integer y' with y < y' <= (1 + eps) y")
    z = np.asarray(z_grid, dtype=float)
    g = _loss_terms(z, np.full(z.shape, y), p)
    gp = _loss_terms(z, np.full(z.shape, y_prime), p)
    slack = np.minimum(gp - (1 - 3 * eps) * g, (1 + 3 * eps) * g - gp) / g
    worst = float(slack.min())
    return CheckReport("rounding", worst >= 0.0, worst, y, p, eps, z.size)


def _rounding_boundaries(eps: float, y_max: int) -> np.ndarray:
    bounds = [8]
    k = 1
    while bounds[-1] < y_max:
        b = math.ceil(8.0 * (1.0 + eps) ** k - 1e-9)
        if b > bounds[-1]:
            bounds.append(b)
        k += 1
    return np.array(bounds, dtype=np.int64)


def round_labels(labels, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Round counts ``>= 8`` up to the next boundary ``ceil(8 (1 + eps)**k)``.

    Returns ``(rounded, group)``; counts below 8 keep their value and form
    groups 0..7, the geometric groups are numbered from 8.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    y = np.asarray(labels, dtype=np.int64)
    rounded = y.copy()
    group = y.copy()
    big = y >= 8
    if np.any(big):
        bounds = _rounding_boundaries(eps, int(y.max()))
        k = np.searchsorted(bounds, y[big], side="left")
        rounded[big] = bounds[k]
        group[big] = 8 + k
    return rounded, group


# ---------------------------------------------------------------------------
# p >= 3: the shift bound cannot hold with an absolute constant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Counterexample:
    p: int
    C: float
    eta: float
    y_witness: int
    lhs: float  # C * g_y(y**(1/p))
    rhs: float  # p * eta * (p - 1)/2 * y**((p - 2)/p)
    shift_gap: float  # f(beta + eta e1) - f(beta) - eta**p - eta*C*f(beta) on a one-row instance

    @property
    def violated(self) -> bool:
        return self.lhs < self.rhs and self.shift_gap > 0


def _growth_ratio(y: int, p: int) -> float:
    return y ** ((p - 2) / p) / (0.5 * math.log(2 * math.pi * y) + 1.0 / (12 * y))


def counterexample_p_geq_3(p: int, C: float = 1.0, eta: float = 0.01) -> Counterexample:
    """Smallest count ``y`` witnessing that no constant ``C`` rescues the shift bound."""
    if int(p) != p or p < 3:
        raise ValueError("the counterexample is for integer p >= 3")
    if C <= 0 or eta <= 0:
        raise ValueError("C and eta must be positive")
    p = int(p)
    threshold = 2.0 * C / (p * (p - 1) * eta)
    witness = next((y for y in range(1, 64) if threshold < _growth_ratio(y, p)), None)
    if witness is None:
        # the ratio increases for y >= 4 when p >= 3
        hi = 64
        while not threshold < _growth_ratio(hi, p):
            hi *= 2
        lo = hi // 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if threshold < _growth_ratio(mid, p):
                hi = mid
            else:
                lo = mid
        witness = hi
    y = witness
    g_min = float(min_value(y))
    lhs = C * g_min
    rhs = p * eta * (p - 1) / 2.0 * y ** ((p - 2) / p)
    z = y ** (1.0 / p)
    cross = math.fsum(math.comb(p, l) * z**l * eta ** (p - l) for l in range(1, p))
    gap = cross - p * y * math.log1p(eta / z) - eta * C * g_min
    return Counterexample(p, C, eta, y, lhs, rhs, gap)
