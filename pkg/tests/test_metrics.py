import math
import random
import statistics

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from chainconsensus.metrics import (MetricsReport, UndefinedMetricError, aggregate_bullwhip,
                                    build_report, bullwhip_negligible, coeff_variation,
                                    cumulative_global_cost)


def test_cv_examples():
    assert coeff_variation([5, 5, 5, 5]) == 0.0
    assert coeff_variation([0, 10]) == 1.0
    assert coeff_variation([2, 4, 4, 4, 5, 5, 7, 9]) == pytest.approx(0.4, abs=1e-12)


def test_cv_matches_statistics_module():
    rng = random.Random(1)
    for _ in range(100):
        xs = [rng.randint(0, 100) for _ in range(rng.randint(2, 50))]
        assume_mean = statistics.fmean(xs)
        if assume_mean == 0:
            continue
        assert coeff_variation(xs) == pytest.approx(statistics.pstdev(xs) / assume_mean,
                                                    rel=1e-12)
        assert coeff_variation(xs, ddof=1) == pytest.approx(
            statistics.stdev(xs) / assume_mean, rel=1e-12)


def test_cv_undefined():
    with pytest.raises(UndefinedMetricError):
        coeff_variation([0, 0, 0])
    with pytest.raises(UndefinedMetricError):
        coeff_variation([4])


def test_aggregate_examples():
    assert aggregate_bullwhip([0.5, 0.8, 2.0]) == pytest.approx(0.8, abs=1e-12)
    assert aggregate_bullwhip([1.0, 1.0, 1.0]) == 1.0
    assert aggregate_bullwhip([0.7]) == 0.7
    with pytest.raises(ValueError):
        aggregate_bullwhip([])
    with pytest.raises(ValueError):
        aggregate_bullwhip([0.5, float("inf")])


def test_cost_examples():
    assert cumulative_global_cost([[1, 2], [3, 4]]) == 10
    assert cumulative_global_cost([[0, 0, 0]] * 5) == 0


def test_cost_matches_double_loop():
    rng = np.random.default_rng(0)
    ledger = rng.integers(0, 500, size=(100, 3)).astype(float).tolist()
    total = 0.0
    for row in ledger:
        for v in row:
            total += v
    assert cumulative_global_cost(ledger) == total


def test_negligible_threshold():
    assert bullwhip_negligible(0.79) is True
    assert bullwhip_negligible(1.0) is False
    assert bullwhip_negligible(65.77168) is False


def test_report_with_idle_agent_has_undefined_bullwhip():
    report = build_report([[1, 1], [1, 1]], [[3, 5], [0, 0]])
    assert report.per_agent_cv[1] is None
    assert report.aggregate_bullwhip is None
    assert report.bullwhip_negligible is None


def test_report_warmup_and_json_round_trip():
    report = build_report([[1.0, 2.0]] * 4, [[100, 4, 6, 4], [9, 5, 5, 5]], warmup=1)
    assert report.per_agent_cv == (pytest.approx(coeff_variation([4, 6, 4])), 0.0)
    assert report.aggregate_bullwhip == 0.0
    assert MetricsReport.from_dict(report.to_dict()) == report
    assert report.to_json() == report.to_json()


series = st.lists(st.integers(0, 1000), min_size=2, max_size=60).filter(lambda xs: sum(xs) > 0)


@settings(max_examples=200)
@given(xs=series, k=st.floats(0.001, 1000))
def test_scale_invariance(xs, k):
    assert coeff_variation([k * x for x in xs]) == pytest.approx(coeff_variation(xs),
                                                                 rel=1e-9, abs=1e-12)


@settings(max_examples=200)
@given(xs=series, c=st.integers(1, 1000))
def test_shift_decreases_cv(xs, c):
    assume(len(set(xs)) > 1)
    assert coeff_variation([x + c for x in xs]) < coeff_variation(xs)


@settings(max_examples=200)
@given(c=st.floats(0, 3), n=st.integers(1, 8))
def test_aggregate_of_copies_is_power(c, n):
    assert aggregate_bullwhip([c] * n) == pytest.approx(c ** n, rel=1e-12, abs=1e-300)


def test_population_sd_is_default():
    xs = [1, 2, 3, 4]
    assert coeff_variation(xs) == pytest.approx(np.std(xs) / np.mean(xs), rel=1e-15)
    assert not math.isclose(coeff_variation(xs), coeff_variation(xs, ddof=1))
