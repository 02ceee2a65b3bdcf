"""Coreset-versus-uniform experiment, summaries, SVG chart and verification suites."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import envelopes as env
from .coreset import build_coreset, build_uniform, remainder_scores
from .datagen import SyntheticSpec, generate_f2
from .hull import HullResult, compute_hull, constraint_margin
from .model import Dataset, Infeasible, load_csv, point_loss, total_loss
from .optimizer import FitResult, OptimizerConfig, minimize, shift_gap_check

SEED_STRIDE = 1_000_003
REFERENCE_ETA = 1e-9
GUARANTEE_EPS_MAX = 1.0 / 14.0
RECORD_COLUMNS = ["method", "k", "rep", "seed", "feasible", "ratio", "runtime_ms", "k_actual"]
SUMMARY_COLUMNS = ["method", "k", "median", "lo", "hi", "feasible_frac",
                   "feasible_median", "feasible_lo", "feasible_hi", "count"]


@dataclass(frozen=True)
class ExperimentConfig:
    p: int = 1
    sizes: tuple = tuple(range(50, 601, 50))
    repetitions: int = 51
    eps: float = 0.05
    seed0: int = 0
    methods: tuple = ("coreset", "uniform")
    dataset: str | None = None
    generator: dict | None = field(default_factory=lambda: {"family": "f2", "n": 20000, "d": 7, "seed": 0})
    out_dir: str | None = None
    hull_mode: str = "auto"
    hull_max_n: int | None = 100_000
    uniform_with_hull: bool = False
    unsafe_eps: bool = False
    record_runtime: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        sizes = tuple(int(k) for k in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "methods", tuple(self.methods))
        if not sizes or any(k < 1 for k in sizes) or list(sizes) != sorted(set(sizes)):
            raise ValueError("sizes must be positive and strictly ascending")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0 < self.eps:
            raise ValueError("eps must be positive")
        if self.eps > GUARANTEE_EPS_MAX and not self.unsafe_eps:
            raise ValueError(f"eps > 1/14 is outside the guarantee; set unsafe_eps to run anyway")
        if not set(self.methods) <= {"coreset", "uniform"}:
            raise ValueError(f"unknown methods in {self.methods}")
        if self.dataset is None and self.generator is None:
            raise ValueError("give a dataset path or a generator spec")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def load_data(self) -> Dataset:
        if self.dataset is not None:
            return load_csv(self.dataset)
        gen = dict(self.generator)
        gen.setdefault("p", self.p)
        data, _ = SyntheticSpec(**gen).generate()
        return data


@dataclass(frozen=True)
class ExperimentRecord:
    method: str
    k: int
    rep: int
    seed: int
    feasible: bool
    ratio: float
    runtime_ms: float
    k_actual: int

    def row(self, with_runtime: bool) -> list[str]:
        rt = f"{self.runtime_ms:.3f}" if with_runtime else "NA"
        return [self.method, str(self.k), str(self.rep), str(self.seed), str(int(self.feasible)),
                repr(float(self.ratio)), rt, str(self.k_actual)]


@dataclass(frozen=True)
class Reference:
    fit_zero: FitResult  # full data at eta ~ 0: the ratio denominator
    fit_eps: FitResult  # full data at the experiment margin
    hull: HullResult
    eta: float


def rep_seed(seed0: int, rep: int) -> int:
    return seed0 + SEED_STRIDE * rep


def reference_fits(data: Dataset, cfg: ExperimentConfig) -> Reference:
    hull = compute_hull(data, cfg.hull_mode, cfg.eps, cfg.hull_max_n)
    eta = constraint_margin(hull, cfg.eps)
    zero = minimize(data.X, data.labels, None, cfg.p, OptimizerConfig(eta=REFERENCE_ETA), hull.indices)
    at_eps = minimize(data.X, data.labels, None, cfg.p, OptimizerConfig(eta=eta), hull.indices)
    for name, fit in (("eta~0", zero), ("eta=eps", at_eps)):
        if not fit.converged or not math.isfinite(fit.objective):
            raise RuntimeError(
                f"reference fit ({name}) failed: converged={fit.converged} "
                f"objective={fit.objective} kkt={fit.kkt_residual:.3e}"
            )
    return Reference(zero, at_eps, hull, eta)


def _one_run(data: Dataset, cfg: ExperimentConfig, ref: Reference, method: str, k: int, rep: int):
    seed = rep_seed(cfg.seed0, rep)
    t0 = time.perf_counter()
    if method == "coreset":
        scores = remainder_scores(data, cfg.p, ref.hull, seed)
        cs = build_coreset(data, cfg.p, k, seed, ref.hull, scores)
        opt = OptimizerConfig(eta=ref.eta)
        hull_rows = np.arange(cs.hull_count)
    else:
        cs = build_uniform(data, k, seed, ref.hull, with_hull=cfg.uniform_with_hull)
        opt = OptimizerConfig(eta=ref.eta if cfg.uniform_with_hull else 0.0)
        hull_rows = np.arange(cs.hull_count)
    try:
        fit = minimize(cs.rows, cs.labels, cs.weights, cfg.p, opt, hull_rows)
        full = total_loss(data, fit.beta, p=cfg.p)
    except (RuntimeError, ValueError, np.linalg.LinAlgError):
        full = Infeasible(float("nan"), -1)
    ms = (time.perf_counter() - t0) * 1e3
    if isinstance(full, Infeasible):
        return ExperimentRecord(method, k, rep, seed, False, math.inf, ms, cs.size)
    return ExperimentRecord(method, k, rep, seed, True, full / ref.fit_zero.objective, ms, cs.size)


def _run_chunk(args):
    data, cfg, ref, jobs = args
    return [_one_run(data, cfg, ref, *job) for job in jobs]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    summary: list
    reference: Reference
    paths: dict = field(default_factory=dict)


def run_experiment(config: ExperimentConfig, data: Dataset | None = None) -> ExperimentResult:
    """Run every (method, k, repetition) and write records, summary and chart."""
    data = config.load_data() if data is None else data
    ref = reference_fits(data, config)
    jobs = [(m, k, r) for m in config.methods for k in config.sizes for r in range(config.repetitions)]
    if config.workers > 1:
        chunks = [jobs[i::config.workers] for i in range(config.workers)]
        with ProcessPoolExecutor(config.workers) as pool:
            parts = pool.map(_run_chunk, [(data, config, ref, c) for c in chunks])
            records = [r for part in parts for r in part]
    else:
        records = _run_chunk((data, config, ref, jobs))
    order = {m: i for i, m in enumerate(config.methods)}
    records.sort(key=lambda r: (order[r.method], r.k, r.rep))
    summary = summarize(records, config.repetitions)
    result = ExperimentResult(config, records, summary, ref)
    if config.out_dir is not None:
        result.paths = write_outputs(result, Path(config.out_dir))
    return result


def write_records(records, path: Path, with_runtime: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(r.row(with_runtime))


def read_records(path: str | Path) -> list[ExperimentRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rt = float("nan") if row["runtime_ms"] == "NA" else float(row["runtime_ms"])
            out.append(ExperimentRecord(row["method"], int(row["k"]), int(row["rep"]), int(row["seed"]),
                                        bool(int(row["feasible"])), float(row["ratio"]), rt,
                                        int(row["k_actual"])))
    return out


def write_outputs(result: ExperimentResult, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    paths = {"records": out / "records.csv", "summary": out / "summary.csv",
             "plot": out / "summary.svg", "timings": out / "timings.csv", "reference": out / "reference.json"}
    write_records(result.records, paths["records"], result.config.record_runtime)
    with open(paths["timings"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "k", "rep", "runtime_ms"])
        for r in result.records:
            w.writerow([r.method, r.k, r.rep, f"{r.runtime_ms:.3f}"])
    write_summary(result.summary, paths["summary"])
    paths["plot"].write_text(emit_plot(result.summary, title=f"p={result.config.p}"))
    ref = result.reference
    paths["reference"].write_text(json.dumps({
        "hull_mode": ref.hull.mode, "hull_size": len(ref.hull), "eta": ref.eta,
        "objective_eta0": ref.fit_zero.objective, "objective_eta": ref.fit_eps.objective,
        "beta_eta0": [float(b) for b in ref.fit_zero.beta],
        "config": asdict(result.config),
    }, indent=2, sort_keys=True) + "\n")
    return paths


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    method: str
    k: int
    median: float
    lo: float
    hi: float
    feasible_frac: float
    feasible_median: float
    feasible_lo: float
    feasible_hi: float
    count: int


def order_statistic_band(values) -> tuple[float, float, float]:
    """Median and the order statistics at ranks ``n/2 -+ sqrt(n)`` (1-based, clamped)."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    if n == 0:
        return (math.nan,) * 3
    lo_rank = max(1, math.floor(n / 2 - math.sqrt(n)))
    hi_rank = min(n, math.ceil(n / 2 + math.sqrt(n)))
    if n % 2:
        med = float(v[n // 2])
    else:
        a, b = v[n // 2 - 1], v[n // 2]
        med = float(b) if math.isinf(b) else float((a + b) / 2)
    return med, float(v[lo_rank - 1]), float(v[hi_rank - 1])


def summarize(records, repetitions: int | None = None) -> list[SummaryRow]:
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault((r.method, r.k), []).append(r)
    methods = list(dict.fromkeys(r.method for r in records))
    out = []
    for (method, k), rs in sorted(groups.items(), key=lambda kv: (methods.index(kv[0][0]), kv[0][1])):
        ratios = [r.ratio if r.feasible else math.inf for r in rs]
        med, lo, hi = order_statistic_band(ratios)
        finite = [x for x in ratios if math.isfinite(x)]
        fmed, flo, fhi = order_statistic_band(finite)
        total = repetitions if repetitions is not None else len(rs)
        frac = 1.0 - (len(rs) - len(finite)) / total
        out.append(SummaryRow(method, k, med, lo, hi, frac, fmed, flo, fhi, len(rs)))
    return out


def write_summary(summary, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([s.method, s.k] + [repr(float(getattr(s, c))) for c in SUMMARY_COLUMNS[2:-1]] + [s.count])


# ---------------------------------------------------------------------------
# SVG chart
# ---------------------------------------------------------------------------

_COLOURS = {"coreset": "#c0392b", "uniform": "#2c6fbb"}
_FALLBACK = ["#27ae60", "#8e44ad", "#d35400"]


def emit_plot(summary, log_y: bool = True, width: int = 640, height: int = 400, title: str = "") -> str:
    """Median ratio per method against ``k``; bands shaded, gaps where the median is infinite."""
    if not summary:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 160, 30, 50
    pw, ph = width - left - right, height - top - bottom
    ks = sorted({s.k for s in summary})
    finite = [v for s in summary for v in (s.median, s.lo, s.hi) if math.isfinite(v) and v > 0]
    ymin = min(finite) if finite else 1.0
    ymax = max(finite) if finite else 2.0
    tf = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    lo_t, hi_t = tf(ymin), tf(ymax)
    if hi_t - lo_t < 1e-9:
        lo_t, hi_t = lo_t - 0.5, hi_t + 0.5
    kmin, kmax = ks[0], ks[-1]

    def px(k):
        return left + (0.5 * pw if kmax == kmin else (k - kmin) / (kmax - kmin) * pw)

    def py(v):
        if not math.isfinite(v):
            return float(top)
        return top + (hi_t - tf(max(v, ymin))) / (hi_t - lo_t) * ph

    methods = list(dict.fromkeys(s.method for s in summary))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        parts.append(f'<text x="{left + pw / 2:.2f}" y="18" text-anchor="middle" font-size="14">{title}</text>')
    for k in ks:
        parts.append(f'<text x="{px(k):.2f}" y="{top + ph + 16}" text-anchor="middle" font-size="10">{k}</text>')
    for frac in (0.0, 0.5, 1.0):
        t = lo_t + frac * (hi_t - lo_t)
        v = 10**t if log_y else t
        parts.append(f'<text x="{left - 6}" y="{py(v) + 3:.2f}" text-anchor="end" font-size="10">{v:.4g}</text>')
    parts.append(f'<text x="{left + pw / 2:.2f}" y="{height - 12}" text-anchor="middle" font-size="12">reduced size k</text>')
    parts.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 16 {top + ph / 2:.2f})">median ratio</text>')
    for mi, method in enumerate(methods):
        colour = _COLOURS.get(method, _FALLBACK[mi % len(_FALLBACK)])
        rows = sorted((s for s in summary if s.method == method), key=lambda s: s.k)
        segments, current = [], []
        for s in rows:
            if math.isfinite(s.median):
                current.append(s)
            elif current:
                segments.append(current)
                current = []
        if current:
            segments.append(current)
        for seg in segments:
            if len(seg) == 1:
                s = seg[0]
                parts.append(f'<line x1="{px(s.k):.2f}" y1="{py(s.hi):.2f}" x2="{px(s.k):.2f}" '
                             f'y2="{py(s.lo):.2f}" stroke="{colour}" stroke-opacity="0.3" stroke-width="6"/>')
            else:
                upper = " ".join(f"{px(s.k):.2f},{py(s.hi):.2f}" for s in seg)
                lower = " ".join(f"{px(s.k):.2f},{py(s.lo):.2f}" for s in reversed(seg))
                parts.append(f'<polygon points="{upper} {lower}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
            line = " ".join(f"{px(s.k):.2f},{py(s.median):.2f}" for s in seg)
            parts.append(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="2"/>')
            for s in seg:
                parts.append(f'<circle cx="{px(s.k):.2f}" cy="{py(s.median):.2f}" r="2.5" fill="{colour}"/>')
        count = sum(s.count for s in rows)
        ly = top + 14 + 18 * mi
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                     f'stroke="{colour}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 34}" y="{ly + 4}" font-size="11">{method} ({count} runs)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------

SUITES = ("envelopes", "lambert", "rounding", "shift")
ENVELOPE_Y_GRID = (1.0, 1e6, 60)
ENVELOPE_Z_POINTS = 512
LAMBERT_POINTS = 100_000
TANGENCY_Y = (1, 10, 100, 1_000, 10_000, 1_000_000)
ROUNDING_EPS = (0.05, 0.1, 0.25)
SHIFT_ETAS = (1e-4, 1e-3, 1e-2, 1e-1)


def envelope_y_grid(lo: float = ENVELOPE_Y_GRID[0], hi: float = ENVELOPE_Y_GRID[1],
                    count: int = ENVELOPE_Y_GRID[2]) -> np.ndarray:
    """``count`` distinct integer counts, log spaced over ``[lo, hi]``.

    Rounding a log grid merges its first points, so the grid is refined until
    exactly ``count`` distinct integers remain.
    """
    m = count
    while True:
        ys = np.unique(np.round(np.geomspace(lo, hi, m)).astype(np.int64))
        if ys.size >= count:
            return ys
        m += 1


def suite_envelopes() -> list[env.CheckReport]:
    out = []
    ys = envelope_y_grid()
    for p in (1, 2):
        for y in ys:
            tau = float(y) ** (1.0 / p)
            z = np.geomspace(tau, 100.0 * tau, ENVELOPE_Z_POINTS + 1)[1:]
            out.append(env.envelope_sandwich_check(int(y), p, z))
    return out


def lambert_grid(num: int = LAMBERT_POINTS) -> np.ndarray:
    """Half uniform, half clustered near the branch point, all inside ``[-1/e, 0)``."""
    a = np.linspace(-env.INV_E, 0.0, num // 2, endpoint=False)
    b = -env.INV_E + np.geomspace(1e-17, env.INV_E, num - num // 2, endpoint=False)
    return np.sort(np.concatenate([a, b]))


def suite_lambert() -> list[env.CheckReport]:
    x = lambert_grid()
    out = [env.lambert_bounds_check(x)]
    res = float(env.lambert_residual(x).max())
    out.append(env.CheckReport("lambert_identity", res <= 1e-13, -res, points=x.size))
    for y in TANGENCY_Y:
        t = env.lambda_star(y)
        scale = max(1.0, abs(point_loss(y, t.z_star, 1)))
        worst = max(t.residual_value / scale, t.residual_slope)
        lo, hi = env.lambda_star_bracket(y) if y >= 2 else (-math.inf, math.inf)
        inside = lo <= t.lambda_star <= hi
        slack = min(1e-8 - worst, t.lambda_star - lo, hi - t.lambda_star)
        out.append(env.CheckReport("tangency", worst <= 1e-8 and inside, slack, y, 1, t.lambda_star, 1))
    return out


def suite_rounding() -> list[env.CheckReport]:
    out = []
    z = np.geomspace(1e-6, 1e6, 12 * 64 + 1)
    for p in (1, 2):
        for eps in ROUNDING_EPS:
            worst = None
            for y in range(8, 65):
                for yp in range(y + 1, math.floor((1 + eps) * y + 1e-9) + 1):
                    r = env.rounding_check(y, yp, eps, z, p)
                    if worst is None or r.worst_slack < worst.worst_slack:
                        worst = r
            if worst is not None:
                out.append(worst)
    return out


def shift_instances(count: int = 10, n: int = 200, d: int = 4, seed: int = 0, p: int = 1):
    return [generate_f2(n, d, p, seed + i)[0] for i in range(count)]


def suite_shift(trials: int = 100, seed: int = 0) -> list[env.CheckReport]:
    out = []
    for p in (1, 2):
        rep = shift_gap_check(shift_instances(p=p, seed=seed), p, SHIFT_ETAS, trials, seed)
        out.append(env.CheckReport(f"shift_p{p}", rep.passed, rep.worst_slack, p=p,
                                   param=rep.tightest_constant, points=rep.trials))
    ce = env.counterexample_p_geq_3(3, 1.0, 0.01)
    out.append(env.CheckReport("shift_counterexample_p3", ce.violated, ce.rhs - ce.lhs, ce.y_witness, 3,
                               ce.eta, 1))
    return out


_SUITE_FUNCS = {"envelopes": suite_envelopes, "lambert": suite_lambert,
                "rounding": suite_rounding, "shift": suite_shift}


def run_verify(suite: str = "all", out_dir: str | Path | None = None) -> list[env.CheckReport]:
    names = SUITES if suite == "all" else (suite,)
    reports = []
    for name in names:
        if name not in _SUITE_FUNCS:
            raise ValueError(f"unknown suite {name!r}")
        reports.extend(_SUITE_FUNCS[name]())
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "worst_slack.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "passed", "worst_slack", "y", "p", "param", "points"])
            for r in reports:
                w.writerow([r.check, int(r.passed), repr(r.worst_slack), repr(float(r.y)), r.p,
                            repr(float(r.param)), r.points])
    return reports
