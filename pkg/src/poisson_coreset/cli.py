"""Command line entry point: ``poisson-coreset <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .coreset import Coreset, build_coreset, build_uniform, remainder_scores
from .datagen import SyntheticSpec, circle_sensitivity_demo
from .harness import SUITES, GUARANTEE_EPS_MAX, ExperimentConfig, run_experiment, run_verify
from .hull import compute_hull, constraint_margin
from .model import load_csv
from .optimizer import OptimizerConfig, minimize

log = logging.getLogger("poisson_coreset")


def _check_eps(eps: float, unsafe: bool) -> None:
    if eps > GUARANTEE_EPS_MAX and not unsafe:
        raise SystemExit(f"eps={eps} exceeds 1/14; pass --unsafe-eps to run outside the guarantee")
    if eps > GUARANTEE_EPS_MAX:
        log.warning("eps=%g is outside the range covered by the approximation guarantee", eps)


def cmd_generate(args) -> int:
    spec = SyntheticSpec(args.family, args.n, args.d, args.p, args.seed)
    out, side = spec.write(args.out)
    print(f"wrote {out} and {side}")
    return 0


def cmd_coreset(args) -> int:
    data = load_csv(args.input)
    if args.uniform and not args.with_hull:
        hull = None
        cs = build_uniform(data, args.k, args.seed)
    else:
        hull = compute_hull(data, args.hull, args.eps)
        if args.uniform:
            cs = build_uniform(data, args.k, args.seed, hull, with_hull=True)
        else:
            scores = remainder_scores(data, args.p, hull, args.seed, refine=args.refine)
            cs = build_coreset(data, args.p, args.k, args.seed, hull, scores)
            if args.scores_out and scores is not None:
                scores.to_csv(args.scores_out)
    cs.to_csv(args.out)
    if args.hull_out and hull is not None:
        hull.to_csv(args.hull_out)
    print(f"wrote {args.out}: {cs.hull_count} hull rows + {cs.k} sampled rows")
    return 0


def _is_coreset_file(path: str) -> bool:
    with open(path) as fh:
        return fh.readline().startswith("# hull_count=")


def cmd_optimize(args) -> int:
    _check_eps(args.eps, args.unsafe_eps)
    if _is_coreset_file(args.input):
        cs = Coreset.from_csv(args.input)
        eta = args.eps * (2.0 if args.kernel_margin else 1.0)
        rows, labels, weights, hull_rows = cs.rows, cs.labels, cs.weights, np.arange(cs.hull_count)
    else:
        data = load_csv(args.input)
        hull = compute_hull(data, args.hull, args.eps)
        eta = constraint_margin(hull, args.eps)
        rows, labels, weights, hull_rows = data.X, data.labels, None, hull.indices
    fit = minimize(rows, labels, weights, args.p, OptimizerConfig(eta=eta), hull_rows)
    line = fit.to_json_line()
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(line + "\n")
    print(line)
    return 0 if fit.converged else 1


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_file(args.config, out_dir=args.out_dir, workers=args.workers,
                                     unsafe_eps=True if args.unsafe_eps else None)
    _check_eps(cfg.eps, cfg.unsafe_eps)
    res = run_experiment(cfg)
    for s in res.summary:
        print(f"{s.method:8s} k={s.k:5d} median={s.median:.6g} band=[{s.lo:.6g}, {s.hi:.6g}] "
              f"feasible={s.feasible_frac:.3f}")
    for name, path in res.paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_verify(args) -> int:
    reports = run_verify(args.suite, args.out_dir)
    for r in reports:
        print(r.line())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed")
    return 1 if failed else 0


def cmd_lowerbound(args) -> int:
    demo = circle_sensitivity_demo(args.n, args.log_eta, args.p)
    print(json.dumps({"n": demo.n, "log_eta": demo.log_eta, "point_cost": demo.point_cost,
                      "bound": demo.bound, "exact_denominator": demo.exact_denominator,
                      "exact_ratio": demo.exact_ratio}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poisson-coreset", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset CSV plus a JSON sidecar")
    g.add_argument("--family", choices=("f2", "circle"), default="f2")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True, help="columns including the intercept")
    g.add_argument("--p", type=int, choices=(1, 2), default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("coreset", help="build a coreset (or uniform sample) CSV")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--p", type=int, choices=(1, 2), default=1)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--eps", type=float, default=0.05)
    c.add_argument("--hull", choices=("auto", "exact", "eps_kernel"), default="auto")
    c.add_argument("--uniform", action="store_true", help="uniform baseline instead of sensitivities")
    c.add_argument("--with-hull", action="store_true", help="keep hull rows in the uniform baseline")
    c.add_argument("--refine", action="store_true", help="Lewis-weight basis for p=1")
    c.add_argument("--scores-out")
    c.add_argument("--hull-out")
    c.set_defaults(func=cmd_coreset)

    o = sub.add_parser("optimize", help="fit on a dataset or coreset CSV, print a JSON line")
    o.add_argument("--in", dest="input", required=True)
    o.add_argument("--p", type=int, choices=(1, 2), default=1)
    o.add_argument("--eps", type=float, default=0.05)
    o.add_argument("--hull", choices=("auto", "exact", "eps_kernel"), default="auto")
    o.add_argument("--kernel-margin", action="store_true",
                   help="coreset input whose hull rows came from an eps-kernel (margin 2 eps)")
    o.add_argument("--unsafe-eps", action="store_true")
    o.add_argument("--out", help="append the JSON line to this file")
    o.set_defaults(func=cmd_optimize)

    e = sub.add_parser("experiment", help="coreset versus uniform sweep from a TOML/JSON config")
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--workers", type=int)
    e.add_argument("--unsafe-eps", action="store_true")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("verify", help="run the numerical inequality checks")
    v.add_argument("--suite", choices=SUITES + ("all",), default="all")
    v.add_argument("--out-dir")
    v.set_defaults(func=cmd_verify)

    lb = sub.add_parser("lowerbound-demo", help="circle instance sensitivity lower bound")
    lb.add_argument("--n", type=int, required=True)
    lb.add_argument("--log-eta", type=float, help="defaults to -n**2")
    lb.add_argument("--p", type=int, choices=(1, 2), default=1)
    lb.set_defaults(func=cmd_lowerbound)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
