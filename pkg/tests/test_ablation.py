import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from combogran import ablation as ab
from combogran.modal import UsageError
from conftest import FIXTURES, read_csv
import oracles

finite = st.floats(-1e4, 1e4, allow_nan=False).filter(lambda x: abs(x) > 1e-3)


def test_pd_examples():
    assert ab.pd(8.42, 34.82) == pytest.approx(-313.54, abs=0.01)
    assert ab.pd(4.81, 62.41) == pytest.approx(-1197.51, abs=0.01)
    assert ab.pd(3.3, 3.3) == 0.0
    with pytest.raises(ValueError, match="undefined"):
        ab.pd(0.0, 1.0)


@given(finite, st.floats(-10, 10, allow_nan=False))
def test_pd_scale_free(b, r):
    assert ab.pd(b, b * (1 + r)) == pytest.approx(-100 * r, abs=1e-6)


@given(st.floats(0.01, 1e3), st.floats(0, 1e3))
def test_retention_plus_pd_is_100(before, after):
    assert ab.retention_rate(before, after) + ab.pd(before, after) == pytest.approx(100.0)


def test_difference_value():
    assert ab.difference_value(-313.54, 90.74) == pytest.approx(-404.28)
    assert ab.difference_value(0.0, 62.83) == pytest.approx(-62.83)


def test_config_markers():
    assert ab.config_markers("S*V*M") == {"S": "✓", "M": "✓", "V": "✓"}
    assert ab.config_markers("Base") == {"S": "×", "M": "×", "V": "×"}
    assert ab.config_markers("M*V+S") == {"S": "+", "M": "✓", "V": "✓"}
    assert ab.config_markers("S") == {"S": "✓", "M": "×", "V": "×"}


def test_grid_matches_oracle_and_pd_fixture():
    rows = ab.read_metric_table(FIXTURES / "modality_ablation.csv")
    grid = ab.build_grid(rows, "S*M*V")
    assert [r.exp_no for r in grid] == list(range(1, 17))
    base = {r.test_set: r for r in rows if r.exp_no in (1, 9)}
    for row in grid:
        for m, v in row.pd.items():
            assert v == pytest.approx(oracles.pd_exact(base[row.test_set].metrics[m], row.metrics[m]), abs=1e-9)
    assert ab.compare_pd(grid, ab.read_pd_table(FIXTURES / "modality_ablation_pd.csv")) == []


def test_baseline_rows_are_zero_and_missing_baseline():
    rows = ab.read_metric_table(FIXTURES / "granularity_ablation.csv")
    grid = ab.build_grid(rows, "S*V*M")
    for r in grid:
        if r.is_baseline:
            assert set(r.pd.values()) == {0.0}
    with pytest.raises(UsageError):
        ab.build_grid(rows, "V")


def test_sign_typos_flagged():
    grid = ab.build_grid(ab.read_metric_table(FIXTURES / "granularity_ablation.csv"), "S*M*V")
    flags = ab.compare_pd(grid, ab.read_pd_table(FIXTURES / "granularity_ablation_pd.csv"))
    assert {(f.exp_no, f.metric) for f in flags} == {
        (18, "ROUGE-1"), (18, "ROUGE-L"), (20, "ROUGE-1"), (20, "ROUGE-L")}
    assert all(f.kind == "sign" for f in flags)
    text = ab.render_table(grid, flags=flags)
    assert text.count("!") == 4


# Efficiency cells where the printed PD does not follow from the printed raw
# values. The quality tables have no such cells.
EFFICIENCY_SLIPS = {(8, "RT"), (13, "RT"), (14, "RT"), (15, "RT"), (17, "SAM/s")}


@pytest.mark.parametrize("raw,printed", [
    ("modality_efficiency.csv", "modality_efficiency_pd.csv"),
    ("granularity_efficiency.csv", "granularity_efficiency_pd.csv"),
])
def test_efficiency_tables(raw, printed):
    grid = ab.build_grid(ab.read_metric_table(FIXTURES / raw), "S*M*V")
    flags = ab.compare_pd(grid, ab.read_pd_table(FIXTURES / printed))
    assert {(f.exp_no, f.metric) for f in flags} <= EFFICIENCY_SLIPS
    assert all(f.kind == "value" and abs(f.computed - f.printed) < 0.1 for f in flags)


def test_difference_value_fixture():
    rows = ab.read_metric_table(FIXTURES / "modality_ablation.csv")
    pd_by_exp = {r.exp_no: r.pd["BLEU-4"] for r in ab.build_grid(rows, "S*V*M")}
    for rec in read_csv("difference_values.csv"):
        got = ab.difference_value(pd_by_exp[int(rec["exp_a"])], pd_by_exp[int(rec["exp_b"])])
        assert got == pytest.approx(float(rec["difference"]), abs=0.01)


def test_ratios_and_reductions():
    q = ab.build_grid(ab.read_metric_table(FIXTURES / "granularity_quality.csv"), "S*M*V")
    row = next(r for r in q if r.test_set == "val_S" and r.symbol == "M*V+S")
    assert row.ratio["BLEU-4"] == pytest.approx(12.975, abs=1e-3)
    e = ab.build_grid(ab.read_metric_table(FIXTURES / "granularity_efficiency.csv"), "S*M*V")
    row = next(r for r in e if r.exp_no == 20)
    assert 100 * row.reduction["RT"] == pytest.approx(63.04, abs=0.01)


def test_retention_examples():
    assert ab.retention_rate(52.3385, 40.9341) == pytest.approx(78.21, abs=0.01)
    assert ab.retention_rate(0.9622, 0.7313) == pytest.approx(76.00, abs=0.01)
    assert ab.retention_rate(7.0, 7.0) == 100.0
    with pytest.raises(ValueError):
        ab.retention_rate(0.0, 1.0)


def test_t_test_repeated_runs():
    scores = [float(r["BLEU-4"]) for r in read_csv("bleu_repeated_runs.csv")]
    res = ab.one_sample_t(scores, 4.81)
    mean, sd, t = oracles.t_stat(scores, 4.81)
    assert res.mean == pytest.approx(62.8902, abs=1e-4)
    assert res.sample_sd == pytest.approx(sd, rel=1e-12)
    assert res.t == pytest.approx(t, rel=1e-12)
    assert res.df == 9 and res.p_bound == "< 0.0001"
    # The printed sd (0.93) and t (198.56) do not follow from these scores.
    assert abs(res.t - 198.56) > 10


def test_t_test_matches_scipy():
    stats = pytest.importorskip("scipy.stats")
    scores = [1.2, 0.7, 1.9, 1.4, 0.3]
    res = ab.one_sample_t(scores, 0.5)
    assert res.t == pytest.approx(stats.ttest_1samp(scores, 0.5).statistic)


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=10, unique=True), st.floats(-50, 50))
def test_t_translation_equivariant(scores, c):
    a = ab.one_sample_t(scores, 1.0)
    b = ab.one_sample_t([x + c for x in scores], 1.0 + c)
    assert b.t == pytest.approx(a.t, rel=1e-6, abs=1e-6)


def test_zero_variance():
    with pytest.raises(ab.ZeroVarianceError) as exc:
        ab.one_sample_t([4.81] * 5, 4.81)
    assert exc.value.mean == 4.81


def test_critical_table_matches_scipy():
    stats = pytest.importorskip("scipy.stats")
    for df, row in ab.T_CRITICAL.items():
        for level, crit in zip(ab.P_LEVELS, row):
            exact = stats.t.ppf(1 - level / 2, df)
            assert exact <= crit < exact + 1e-4


def test_p_bound_levels():
    assert ab.p_bound(1.0, 9) == ">= 0.05"
    assert ab.p_bound(2.5, 9) == "< 0.05"
    assert ab.p_bound(11.0, 9) == "< 0.0001"
    assert ab.p_bound(-11.0, 100) == "< 0.0001"
    assert math.isfinite(ab.T_CRITICAL[30][3])
