import re

import numpy as np
import pytest

from transtagger import numerics as nx
from transtagger import temporal
from transtagger.temporal import TimeElements, decompose_timestamp, time_as_text

from oracles import calendar_fields


@pytest.mark.parametrize(
    "ts, expected",
    [
        ("2020-01-01T13:45:00Z", TimeElements(minute=45, hour=13, weekday=2, month=0)),
        ("1970-01-01T00:00:00Z", TimeElements(minute=0, hour=0, weekday=3, month=0)),
        # naive input is read as UTC; offsets are converted
        ("2020-01-01T13:45:00", TimeElements(45, 13, 2, 0)),
        ("2020-01-01T23:30:00-02:00", TimeElements(30, 1, 3, 0)),
    ],
)
def test_decompose_examples(ts, expected):
    assert decompose_timestamp(ts) == expected


@pytest.mark.parametrize("bad", ["not a date", "2020-13-01T00:00:00Z", "2020-01-01", ""])
def test_decompose_rejects(bad):
    with pytest.raises(ValueError):
        decompose_timestamp(bad)


def test_decompose_matches_calendar_oracle():
    rng = np.random.default_rng(0)
    lo, hi = 0, 4102444800  # 1970-01-01 .. 2100-01-01
    for secs in rng.integers(lo, hi, size=1000):
        ref = calendar_fields(int(secs))
        el = decompose_timestamp(ref["iso"])
        assert (el.minute, el.hour, el.weekday, el.month) == (ref["minute"], ref["hour"], ref["weekday"], ref["month0"])


def test_time_as_text_format():
    assert time_as_text("2020-01-01T13:45:00Z") == "y2020 m1 d1 h13 min45 w2"
    assert time_as_text("2020-01-01T13:45:00Z") == time_as_text("2020-01-01T13:45:00Z")


def test_time_as_text_round_trip():
    rng = np.random.default_rng(1)
    for secs in rng.integers(0, 4102444800, size=50):
        ref = calendar_fields(int(secs))
        fields = {key: int(num) for key, num in re.findall(r"([a-z]+)(\d+)", time_as_text(ref["iso"]))}
        assert fields == {
            "y": ref["year"],
            "m": ref["month0"] + 1,
            "d": ref["day"],
            "h": ref["hour"],
            "min": ref["minute"],
            "w": ref["weekday"],
        }


def _tables(seed=0, elements=temporal.DEFAULT_ELEMENTS, H=6):
    p = {}
    temporal.init_unihier(p, H, np.random.default_rng(seed), elements)
    return p


def test_unihier_tables_init_range():
    p = _tables(H=128)
    for el in temporal.DEFAULT_ELEMENTS:
        t = p[f"time.unihier.{el}"].data
        assert t.shape == (60, 128)
        assert t.min() >= -1.0 and t.max() <= 1.0 and t.std() > 0.4


def test_unihier_zero_tables():
    p = _tables()
    for t in p.values():
        t.data[:] = 0
    out = temporal.unihier_embed([decompose_timestamp("2021-06-01T10:00:00Z")], p)
    assert not out.data.any()


def test_unihier_ignores_minute_by_default():
    p = _tables()
    a = temporal.unihier_embed([decompose_timestamp("2021-06-01T10:01:00Z")], p).data
    b = temporal.unihier_embed([decompose_timestamp("2021-06-01T10:59:00Z")], p).data
    np.testing.assert_array_equal(a, b)


def test_unihier_minute_opt_in():
    elements = ("minute", "hour", "weekday", "month")
    p = _tables(elements=elements)
    a = temporal.unihier_embed([decompose_timestamp("2021-06-01T10:01:00Z")], p, elements).data
    b = temporal.unihier_embed([decompose_timestamp("2021-06-01T10:59:00Z")], p, elements).data
    assert not np.allclose(a, b)


def test_unihier_equals_row_sum():
    p = _tables(seed=3)
    el = TimeElements(minute=7, hour=17, weekday=5, month=11)
    out = temporal.unihier_embed([el], p).data[0]
    expected = p["time.unihier.hour"].data[17] + p["time.unihier.weekday"].data[5] + p["time.unihier.month"].data[11]
    np.testing.assert_allclose(out, expected, atol=0)


def test_unihier_is_linear_in_tables():
    p = _tables(seed=4)
    el = [TimeElements(0, 3, 1, 2), TimeElements(0, 22, 6, 9)]
    base = temporal.unihier_embed(el, p).data
    for t in p.values():
        t.data *= 2.5
    np.testing.assert_allclose(temporal.unihier_embed(el, p).data, 2.5 * base, atol=1e-12)


def test_unihier_gradient_is_sparse():
    p = _tables(seed=5)
    el = [TimeElements(0, 3, 1, 2), TimeElements(0, 3, 4, 2)]
    grads = nx.backward(nx.mean(nx.mul(temporal.unihier_embed(el, p), np.ones((2, 6)))))
    hour_rows = np.flatnonzero(np.abs(grads["time.unihier.hour"]).sum(axis=1))
    weekday_rows = np.flatnonzero(np.abs(grads["time.unihier.weekday"]).sum(axis=1))
    assert list(hour_rows) == [3]
    assert list(weekday_rows) == [1, 4]


def test_unihier_index_out_of_table():
    p = {"time.unihier.hour": nx.parameter(np.zeros((20, 4)))}
    with pytest.raises(IndexError):
        temporal.unihier_embed([TimeElements(0, 23, 0, 0)], p, ("hour",))


def test_time_elements_range_check():
    with pytest.raises(ValueError):
        TimeElements(minute=0, hour=24, weekday=0, month=0)


def test_one_hot_has_three_ones():
    m = temporal.one_hot_matrix([TimeElements(12, 23, 6, 11), TimeElements(0, 0, 0, 0)])
    assert m.shape == (2, 43)
    for row in m:
        assert set(np.unique(row)) == {0.0, 1.0} and row.sum() == 3


def test_one_hot_zero_projection():
    p = {"time.onehot.proj": nx.parameter(np.zeros((43, 5)))}
    assert not temporal.time_one_hot([TimeElements(1, 2, 3, 4)], p).data.any()


def test_one_hot_indexes_projection_rows():
    p = {}
    temporal.init_time_onehot(p, 5, np.random.default_rng(6))
    proj = p["time.onehot.proj"].data
    out = temporal.time_one_hot([TimeElements(30, 9, 4, 7)], p).data[0]
    np.testing.assert_allclose(out, proj[9] + proj[24 + 4] + proj[31 + 7], atol=1e-15)
