import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import special, stats

from facilmut.metrics import (
    betainc,
    build_comparison,
    cohens_d,
    significance_stars,
    unique_viable_behaviors,
    welch_t_test,
)
from facilmut.records import BestIndividual, GenerationStats, RunRecord

# scipy.stats.ttest_ind([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], equal_var=False)
WELCH_ORACLE_P = 0.34659350708733416


def test_unique_viable_behaviors():
    assert unique_viable_behaviors({}) == 0
    assert unique_viable_behaviors({"grad": 0.6, "(grad + 0.0)": 0.6, "alpha": 0.1}) == 2
    assert unique_viable_behaviors({"grad": 0.5}) == 0


@given(st.dictionaries(st.text(max_size=5), st.floats(0, 1)), st.floats(0, 1), st.floats(0, 1))
def test_unique_viable_monotone_in_threshold(archive, t1, t2):
    lo, hi = sorted((t1, t2))
    assert unique_viable_behaviors(archive, hi) <= unique_viable_behaviors(archive, lo)


def test_betainc_against_scipy():
    worst = 0.0
    for a, b in itertools.product([0.5, 1.0, 2.5, 4.0, 14.0, 60.0], [0.5, 1.0, 3.0, 20.0]):
        for x in np.linspace(0, 1, 41):
            worst = max(worst, abs(betainc(a, b, float(x)) - special.betainc(a, b, x)))
    assert worst < 1e-10


def test_welch_reference_example():
    r = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert r.t == pytest.approx(-1.0)
    assert r.degrees_of_freedom == pytest.approx(8.0)
    assert abs(r.p_two_sided - WELCH_ORACLE_P) < 1e-10


def test_welch_identical_samples():
    r = welch_t_test([0.3, 0.5, 0.9], [0.3, 0.5, 0.9])
    assert r.t == 0.0 and r.p_two_sided == 1.0


def test_welch_degenerate_constants():
    r = welch_t_test([1, 1, 1], [1, 1])
    assert r.degenerate and r.p_two_sided == 1.0
    r = welch_t_test([1, 1, 1], [2, 2])
    assert r.degenerate and r.p_two_sided == 0.0


@pytest.mark.filterwarnings("ignore:Precision loss:RuntimeWarning")
@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12),
)
def test_welch_matches_scipy_and_is_antisymmetric(a, b):
    assume(np.var(a) > 1e-6 or np.var(b) > 1e-6)
    r = welch_t_test(a, b)
    s = welch_t_test(b, a)
    assert s.t == pytest.approx(-r.t)
    assert s.p_two_sided == pytest.approx(r.p_two_sided, abs=1e-12)
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert r.t == pytest.approx(ref.statistic, rel=1e-9, abs=1e-9)
    assert r.p_two_sided == pytest.approx(ref.pvalue, abs=1e-9)


def test_welch_p_uniform_under_null():
    rng = np.random.default_rng(2024)
    ps = [welch_t_test(rng.normal(size=10), rng.normal(size=10)).p_two_sided for _ in range(10_000)]
    ks = stats.kstest(ps, "uniform").statistic
    assert ks < 0.02


def test_cohens_d_examples():
    assert cohens_d([1, 2, 3], [1, 2, 3]).d == 0.0
    assert cohens_d([1, 2, 3], [1, 2, 3]).band == "S"
    e = cohens_d([0, 0, 0, 0], [1, 1, 1, 1])
    assert e.degenerate
    e = cohens_d([2, 4, 6], [1, 3, 5])
    assert e.d == 0.5 and e.band == "M"


@pytest.mark.parametrize("d,band", [(0.0, "S"), (0.49, "S"), (0.5, "M"), (-0.79, "M"), (0.8, "L"), (-3, "L")])
def test_effect_bands(d, band):
    from facilmut.metrics import effect_band

    assert effect_band(d) == band


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=2, max_size=8),
    st.lists(st.floats(-100, 100), min_size=2, max_size=8),
    st.floats(0.1, 10),
    st.floats(-50, 50),
)
def test_cohens_d_invariances(a, b, scale, shift):
    base = cohens_d(a, b)
    assume(not base.degenerate and np.var(a + b) > 1e-3)
    assert cohens_d(np.multiply(a, scale), np.multiply(b, scale)).d == pytest.approx(base.d, rel=1e-6, abs=1e-9)
    assert cohens_d(np.add(a, shift), np.add(b, shift)).d == pytest.approx(base.d, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize(
    "p,stars",
    [
        (0.03, "*"), (0.5, ""), (1e-6, "****"),
        (0.05, ""), (0.0499, "*"),
        (0.01, "**"), (0.0101, "*"),
        (0.001, "***"), (0.00101, "**"),
        (0.0001, "***"), (0.0000999, "****"),
        (1.0, ""), (0.0, "****"),
    ],
)
def test_star_bands(p, stars):
    assert significance_stars(p) == stars


def _run(approach, seed, best, mean, div, cost):
    stats_ = [GenerationStats(0, best, mean, [0] * 20, cost, 0, 0)]
    return RunRecord(
        config={"approach": approach, "master_seed": seed},
        generation_stats=stats_,
        best_individual=BestIndividual({}, "grad", best, 0),
        unique_viable_count=div,
        evaluations_performed=cost,
        archive_size=div + 5,
    )


def test_comparison_identical_sets():
    runs = [_run("A", s, 0.9 + s / 100, 0.5 + s / 50, 10 + s, 100 + 3 * s) for s in range(3)]
    rep = build_comparison({"A": runs, "B": runs})
    assert len(rep.pairwise) == 4
    assert all(t.p == 1.0 and t.stars == "" for t in rep.pairwise)


def test_comparison_shape_and_bolding():
    rng = np.random.default_rng(0)
    means = {"FMX": (0.933, 0.625, 599, 2915), "FM": (0.931, 0.608, 323, 2137),
             "OM": (0.927, 0.281, 122, 2978), "OMX": (0.928, 0.093, 73, 10933)}
    runs = {
        ap: [_run(ap, s, m[0] + rng.normal(0, 1e-3), m[1] + rng.normal(0, 0.02),
                  int(m[2] + rng.normal(0, 20)), int(m[3] + rng.normal(0, 100))) for s in range(5)]
        for ap, m in means.items()
    }
    rep = build_comparison(runs)
    for metric in ("best_fitness", "population_fitness", "diversity", "cost"):
        assert len(rep.tests_for(metric)) == 6
    assert rep.best == {"best_fitness": "FMX", "population_fitness": "FMX", "diversity": "FMX", "cost": "FM"}
    text = rep.to_text()
    assert "**2137" in text.replace(".0**", "**") or "**21" in text
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",")[:3] == ["metric", "approach_a", "approach_b"]
    assert len(lines) == 1 + 24


def test_comparison_needs_two_runs():
    with pytest.raises(ValueError):
        build_comparison({"A": [_run("A", 0, 1, 1, 1, 1)], "B": [_run("B", 0, 1, 1, 1, 1)] * 2})
