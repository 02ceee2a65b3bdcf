import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from poisson_coreset.datagen import generate_f2
from poisson_coreset.harness import (
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    ExperimentRecord,
    SummaryRow,
    emit_plot,
    envelope_y_grid,
    lambert_grid,
    order_statistic_band,
    read_records,
    rep_seed,
    run_experiment,
    run_verify,
    summarize,
)
from poisson_coreset.model import total_loss

GOLDEN = Path(__file__).parent / "data" / "golden_plot.svg"


def rec(method, k, rep, ratio):
    feasible = math.isfinite(ratio)
    return ExperimentRecord(method, k, rep, rep, feasible, ratio, 0.0, k)


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert c.sizes == tuple(range(50, 601, 50)) and c.repetitions == 51 and c.eps == 0.05
        assert c.generator == {"family": "f2", "n": 20000, "d": 7, "seed": 0}

    @pytest.mark.parametrize("kw", [dict(sizes=(100, 50)), dict(sizes=(0,)), dict(repetitions=0),
                                    dict(eps=0.1), dict(methods=("bogus",)),
                                    dict(dataset=None, generator=None)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ExperimentConfig(**kw)

    def test_unsafe_eps(self):
        assert ExperimentConfig(eps=0.1, unsafe_eps=True).eps == 0.1

    def test_toml(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text('p = 2\nsizes = [50, 100]\nrepetitions = 3\n[generator]\nfamily = "f2"\nn = 500\nd = 4\n')
        c = ExperimentConfig.from_file(path, workers=None, out_dir="x")
        assert (c.p, c.sizes, c.repetitions, c.out_dir) == (2, (50, 100), 3, "x")
        assert c.load_data().n == 500

    def test_json_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"p": 1, "colour": "red"}))
        with pytest.raises(ValueError, match="colour"):
            ExperimentConfig.from_file(path)

    def test_seeds(self):
        assert rep_seed(0, 0) == 0 and rep_seed(5, 2) == 5 + 2 * 1_000_003


class TestSummary:
    def test_band_ranks(self):
        v = list(range(1, 26))  # n=25: ranks floor(12.5-5)=7 and ceil(12.5+5)=18
        assert order_statistic_band(v) == (13.0, 7.0, 18.0)

    def test_identical(self):
        rs = [rec("coreset", 50, i, 1.01) for i in range(9)]
        s = summarize(rs)[0]
        assert (s.median, s.lo, s.hi, s.feasible_frac) == (1.01, 1.01, 1.01, 1.0)

    def test_majority_infeasible(self):
        rs = [rec("uniform", 50, i, math.inf if i < 101 else 1.1) for i in range(201)]
        s = summarize(rs, 201)[0]
        assert math.isinf(s.median)
        assert s.feasible_frac == pytest.approx(100 / 201)
        assert s.feasible_median == pytest.approx(1.1)

    def test_even_count_with_infinite_upper_middle(self):
        assert math.isinf(order_statistic_band([1.0, 2.0, math.inf, math.inf])[0])

    def test_mixed_bracket(self):
        rng = np.random.default_rng(0)
        ratios = list(1 + rng.exponential(0.05, 51))
        ratios[:5] = [math.inf] * 5
        s = summarize([rec("uniform", 100, i, r) for i, r in enumerate(ratios)], 51)[0]
        assert s.lo <= s.median <= s.hi
        assert s.feasible_frac == 1 - 5 / 51

    def test_order(self):
        rs = [rec("uniform", 100, 0, 1.0), rec("coreset", 50, 0, 1.0), rec("uniform", 50, 0, 1.0)]
        assert [(s.method, s.k) for s in summarize(rs)] == [("uniform", 50), ("uniform", 100), ("coreset", 50)]

    def test_empty_band(self):
        assert all(math.isnan(x) for x in order_statistic_band([]))


class TestPlot:
    def golden_rows(self):
        inf = math.inf
        return [
            SummaryRow("coreset", 50, 1.03, 1.01, 1.06, 1.0, 1.03, 1.01, 1.06, 11),
            SummaryRow("coreset", 100, 1.01, 1.005, 1.02, 1.0, 1.01, 1.005, 1.02, 11),
            SummaryRow("coreset", 150, 1.004, 1.002, 1.008, 1.0, 1.004, 1.002, 1.008, 11),
            SummaryRow("uniform", 50, inf, 1.2, inf, 0.4, 1.3, 1.2, 1.5, 11),
            SummaryRow("uniform", 100, 1.2, 1.1, inf, 0.7, 1.15, 1.1, 1.3, 11),
            SummaryRow("uniform", 150, 1.08, 1.05, 1.2, 0.9, 1.08, 1.05, 1.2, 11),
        ]

    def test_golden(self):
        assert emit_plot(self.golden_rows(), title="golden") == GOLDEN.read_text()

    def test_gap_at_infinite_median(self):
        svg = emit_plot(self.golden_rows())
        uniform = [line for line in svg.splitlines() if "#2c6fbb" in line and line.startswith("<circle")]
        assert len(uniform) == 2

    def test_single_point(self):
        svg = emit_plot([SummaryRow("coreset", 50, 1.02, 1.01, 1.03, 1.0, 1.02, 1.01, 1.03, 5)], log_y=False)
        assert svg.count("<circle") == 1 and "stroke-width=\"6\"" in svg
        assert "coreset (5 runs)" in svg

    def test_empty(self):
        with pytest.raises(ValueError):
            emit_plot([])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = ExperimentConfig(p=1, sizes=(50, 150), repetitions=4, out_dir=str(out),
                           generator={"family": "f2", "n": 2000, "d": 4, "seed": 0})
    return cfg, run_experiment(cfg)


class TestExperiment:
    def test_files(self, small_run):
        cfg, res = small_run
        out = Path(cfg.out_dir)
        for name in ("records.csv", "summary.csv", "summary.svg", "timings.csv", "reference.json"):
            assert (out / name).exists()
        with open(out / "records.csv") as fh:
            assert next(csv.reader(fh)) == RECORD_COLUMNS
        with open(out / "summary.csv") as fh:
            assert next(csv.reader(fh))[:6] == SUMMARY_COLUMNS[:6]
        assert len(res.records) == 2 * 2 * 4
        assert all(r.runtime_ms == r.runtime_ms for r in res.records)
        assert all(row.split(",")[6] == "NA" for row in (out / "records.csv").read_text().splitlines()[1:])

    def test_ratio_floor_and_accounting(self, small_run):
        _, res = small_run
        for r in res.records:
            assert (r.feasible and r.ratio >= 1 - 1e-9) or (not r.feasible and math.isinf(r.ratio))
        for s in res.summary:
            rs = [r for r in res.records if (r.method, r.k) == (s.method, s.k)]
            assert s.feasible_frac == 1 - sum(math.isinf(r.ratio) for r in rs) / 4

    def test_coreset_sizes(self, small_run):
        _, res = small_run
        h = len(res.reference.hull)
        for r in res.records:
            assert r.k_actual == (r.k + h if r.method == "coreset" else r.k)

    def test_reference_self_ratio(self, small_run):
        cfg, res = small_run
        data = cfg.load_data()
        ref = res.reference.fit_zero
        assert total_loss(data, ref.beta, p=1) / ref.objective == pytest.approx(1.0, abs=1e-15)

    def test_round_trip_and_determinism(self, small_run, tmp_path):
        cfg, res = small_run
        back = read_records(Path(cfg.out_dir) / "records.csv")
        assert [(r.method, r.k, r.rep, r.ratio) for r in back] == [(r.method, r.k, r.rep, r.ratio) for r in res.records]
        again = ExperimentConfig(**{**cfg.__dict__, "out_dir": str(tmp_path), "workers": 2})
        run_experiment(again)
        assert (tmp_path / "records.csv").read_bytes() == (Path(cfg.out_dir) / "records.csv").read_bytes()

    def test_dataset_path(self, tmp_path):
        from poisson_coreset.model import save_csv

        data, _ = generate_f2(600, 4, 2, seed=1)
        save_csv(data, tmp_path / "d.csv")
        cfg = ExperimentConfig(p=2, sizes=(60,), repetitions=2, dataset=str(tmp_path / "d.csv"),
                               methods=("coreset",))
        res = run_experiment(cfg)
        assert len(res.records) == 2 and res.paths == {}


class TestVerify:
    def test_grids(self):
        ys = envelope_y_grid()
        assert ys.size == 60 and ys[0] == 1 and ys[-1] == 10**6
        x = lambert_grid()
        assert x.size == 100_000 and x.min() >= -1 / math.e and x.max() < 0

    def test_unknown(self):
        with pytest.raises(ValueError):
            run_verify("nope")

    @pytest.mark.parametrize("suite", ["envelopes", "lambert", "shift"])
    def test_passing_suites(self, suite, tmp_path):
        reports = run_verify(suite, tmp_path)
        assert all(r.passed for r in reports), [r.line() for r in reports if not r.passed]
        lines = (tmp_path / "worst_slack.csv").read_text().splitlines()
        assert lines[0] == "check,passed,worst_slack,y,p,param,points"
        assert len(lines) == len(reports) + 1

    def test_rounding_suite_reports_violation(self):
        reports = run_verify("rounding")
        assert len(reports) == 6
        failed = [r for r in reports if not r.passed]
        # the factor-3 rounding bound breaks for large enough y at every eps tested
        assert {r.param for r in failed} == {0.05, 0.1, 0.25}
