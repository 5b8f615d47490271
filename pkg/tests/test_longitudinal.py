import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from orchestra.agents.longitudinal import (
    FORWARD_FILLED,
    INTERPOLATED,
    OBSERVED,
    LongitudinalAgent,
    SeriesPoint,
    align,
    features,
    ols_slope,
    parse_csv,
    rate_of_change,
    snap_month,
)
from orchestra.errors import EmptySeries


def pts(*pairs):
    return [SeriesPoint(t, v) for t, v in pairs]


def test_ols_slope_hand_value():
    assert ols_slope([0, 1, 2], [1, 3, 5]) == 2.0


def test_snap_rounds_halves_down():
    assert [snap_month(t) for t in (0.4, 0.5, 0.6, 1.5, 2.49)] == [0, 0, 1, 1, 2]


def test_same_month_observations_are_averaged():
    values, fill = align(pts((0, 1), (0.3, 3), (1, 5)))
    assert values == [2.0, 5.0] and fill == [OBSERVED, OBSERVED]


@pytest.mark.parametrize(
    "gap_end,kind",
    [(2, FORWARD_FILLED), (3, FORWARD_FILLED), (4, INTERPOLATED), (6, INTERPOLATED)],
)
def test_fill_rule_boundary(gap_end, kind):
    # observations at month 0 and gap_end leave gap_end - 1 missing months
    values, fill = align(pts((0, 10), (gap_end, 10 + gap_end)))
    assert set(fill[1:-1]) == {kind}
    if kind == FORWARD_FILLED:
        assert values[1:-1] == [10] * (gap_end - 1)
    else:
        assert values[1:-1] == pytest.approx([10 + m for m in range(1, gap_end)], abs=1e-12)


def test_windows_need_two_available_values():
    f = features(pts((0, 1), (1, 3), (2, 5)))
    assert f.moving_average == [None, 2.0, 3.0]
    assert f.slope == [None, 2.0, 2.0]


def test_rate_of_change_definition():
    assert rate_of_change([2.0, 3.0], 1, 1) == 0.5
    assert rate_of_change([-2.0, -3.0], 1, 1) == -0.5
    assert rate_of_change([0.0, 3.0], 1, 1) is None
    assert rate_of_change([1.0, 3.0], 0, 1) is None


def test_empty_series():
    with pytest.raises(EmptySeries):
        features([])


def test_point_validation():
    with pytest.raises(ValueError):
        SeriesPoint(-1, 0)
    with pytest.raises(ValueError):
        SeriesPoint(0, float("nan"))


def test_parse_csv_and_agent(tmp_path):
    text = "time_months,mmse,cdr\n0,28,0.5\n1,27,\n5,24,1.0\n"
    series = parse_csv(text)
    assert [p.value for p in series["mmse"]] == [28, 27, 24]
    assert [p.time for p in series["cdr"]] == [0, 5]
    (tmp_path / "p001.csv").write_text(text)
    agent = LongitudinalAgent(tmp_path)
    inline = json.loads(agent(text))
    assert json.loads(agent("p001")) == inline
    assert inline["mmse"]["fill"] == ["observed", "observed", "interp", "interp", "interp", "observed"]
    with pytest.raises(ValueError):
        agent("../outside")
    with pytest.raises(ValueError):
        parse_csv("t,x\n0,1\n")


# --- properties --------------------------------------------------------------------

values_st = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def series(draw, integer_times=False):
    n = draw(st.integers(1, 12))
    if integer_times:
        times = draw(st.lists(st.integers(0, 30), min_size=n, max_size=n, unique=True))
    else:
        times = draw(st.lists(st.floats(0, 30, allow_nan=False), min_size=n, max_size=n))
    return [SeriesPoint(t, draw(values_st)) for t in times]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=2, max_size=10, unique=True), values_st, st.floats(-50, 50, allow_nan=False))
def test_affine_series_interpolates_exactly(months, a, b):
    f = features([SeriesPoint(m, a + b * m) for m in months])
    for m, (v, kind) in enumerate(zip(f.aligned, f.fill)):
        if kind in (OBSERVED, INTERPOLATED):
            assert math.isclose(v, a + b * m, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(a) + abs(b) * 40))


@settings(max_examples=100, deadline=None)
@given(series(integer_times=True), st.integers(1, 12))
def test_time_shift_invariance(s, shift):
    base = features(s)
    moved = features([SeriesPoint(p.time + shift, p.value) for p in s])
    assert moved.aligned[:shift] == [None] * shift
    assert moved.aligned[shift:] == base.aligned
    assert moved.fill[shift:] == base.fill
    assert moved.moving_average[shift:] == base.moving_average
    assert moved.slope[shift:] == base.slope
    for (t, d), v in base.rate_of_change.items():
        assert moved.rate_of_change[(t + shift, d)] == v


@settings(max_examples=100, deadline=None)
@given(series(), st.sampled_from([-3.0, -0.5, 0.25, 2.0, 10.0]))
def test_value_scale_equivariance(s, a):
    base = features(s)
    scaled = features([SeriesPoint(p.time, a * p.value) for p in s])
    tol = 1e-9

    def same(x, y):
        return (x is None and y is None) or math.isclose(x, y, rel_tol=tol, abs_tol=tol)

    assert all(same(a * x if x is not None else None, y) for x, y in zip(base.aligned, scaled.aligned))
    assert all(same(a * x if x is not None else None, y) for x, y in zip(base.slope, scaled.slope))
    assert all(same(a * x if x is not None else None, y) for x, y in zip(base.moving_average, scaled.moving_average))
    sign = 1.0 if a > 0 else -1.0
    for (t, d), v in base.rate_of_change.items():
        then = base.aligned[t - d]
        # the eps cutoff is absolute, so only bases well clear of it scale cleanly
        if then is None or abs(then) < 1e-6:
            continue
        w = scaled.rate_of_change[(t, d)]
        assert v is not None and w is not None and same(sign * v, w)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-50, 50)), min_size=2, max_size=8, unique_by=lambda p: p[0]))
def test_slope_matches_closed_form(points):
    ts, xs = zip(*points)
    assert math.isclose(ols_slope(ts, xs), oracles.ols_slope(points), rel_tol=1e-12, abs_tol=1e-12)
