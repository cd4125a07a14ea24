import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cryptoseq.dataset import TimeSeriesFrame
from cryptoseq.errors import SchemaError, UndefinedCorrelationError, ZeroVarianceError
from cryptoseq.features import (add_price_features, annualized_volatility, apply_normalizer,
                                daily_returns, ema, fit_normalizer, macd, prune_collinear,
                                spearman)
from cryptoseq.numerics import RandomStream

from oracles import brute_spearman, loop_ema


def frame(**cols):
    n = len(next(iter(cols.values())))
    return TimeSeriesFrame(np.datetime64("2020-01-01") + np.arange(n), cols)


# --- ema / macd --------------------------------------------------------------

def test_ema_constant():
    np.testing.assert_array_equal(ema([4.0] * 10, 5), [4.0] * 10)


def test_ema_hand():
    np.testing.assert_allclose(ema([1.0, 2.0], 2), [1.0, 5 / 3], rtol=0, atol=1e-12)
    assert round(ema([1.0, 2.0], 2)[1], 6) == 1.666667


def test_ema_period_one():
    x = RandomStream(1).normal(50)
    np.testing.assert_array_equal(ema(x, 1), x)


def test_ema_errors():
    with pytest.raises(ValueError):
        ema([], 3)
    with pytest.raises(ValueError):
        ema([1.0], 0)


def test_ema_matches_loop():
    x = RandomStream(2).normal(300)
    for p in (2, 9, 12, 26):
        np.testing.assert_allclose(ema(x, p), loop_ema(x, p), rtol=0, atol=1e-12)


def test_macd_constant():
    for part in macd([7.0] * 60):
        np.testing.assert_array_equal(part, 0.0)


def test_macd_linear_asymptote():
    a = 0.37
    line, sig, hist = macd(a * np.arange(501.0))
    assert abs(line[500] - 7 * a) < 1e-6
    assert abs(hist[500]) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=80))
def test_macd_histogram_identity(xs):
    line, sig, hist = macd(xs)
    assert np.array_equal(hist, line - sig)


# --- returns / volatility ----------------------------------------------------

def test_returns():
    np.testing.assert_allclose(daily_returns([100, 110]), [0.10], atol=1e-15)
    np.testing.assert_allclose(daily_returns([100, 110, 99]), [0.10, -0.10], atol=1e-15)
    np.testing.assert_array_equal(daily_returns([3.0] * 5), 0.0)


def test_returns_errors():
    with pytest.raises(ValueError):
        daily_returns([1.0, 0.0])
    with pytest.raises(ValueError):
        daily_returns([1.0])


def test_volatility_hand():
    out = annualized_volatility([0.01, -0.01, 0.01, -0.01], 4)
    assert out.shape == (1,)
    assert abs(out[0] - 0.01 * math.sqrt(365)) < 1e-15
    assert round(out[0], 6) == 0.191050


def test_volatility_constant_and_scaling():
    np.testing.assert_allclose(annualized_volatility([0.02] * 10, 3), 0.0, atol=1e-18)
    r = RandomStream(3).normal(100) * 0.01
    np.testing.assert_allclose(annualized_volatility(2 * r, 30), 2 * annualized_volatility(r, 30),
                               rtol=1e-14)


def test_volatility_errors():
    with pytest.raises(ValueError):
        annualized_volatility([0.1, 0.2], 3)
    with pytest.raises(ValueError):
        annualized_volatility([0.1, 0.2], 1)


# --- spearman ----------------------------------------------------------------

def test_spearman_monotone():
    x = np.arange(10.0)
    assert spearman(x, x ** 3) == 1.0
    assert spearman(x, -x) == -1.0


def test_spearman_hand():
    assert abs(spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-15


def test_spearman_constant():
    with pytest.raises(UndefinedCorrelationError):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])


def test_spearman_against_brute_force_with_ties():
    r = RandomStream(11)
    for _ in range(50):
        n = 2 + r.below(30)
        x = np.floor(r.uniform(n, 0, 5))
        y = np.floor(r.uniform(n, 0, 5))
        try:
            expect = brute_spearman(x, y)
        except ZeroDivisionError:
            continue
        assert abs(spearman(x, y) - expect) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-500, 500), st.integers(-500, 500)), min_size=3, max_size=40))
def test_spearman_invariances(pairs):
    # grid values keep exp and cube strictly monotone in floating point
    x = np.array([p[0] for p in pairs]) / 100
    y = np.array([p[1] for p in pairs]) / 100
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    rho = spearman(x, y)
    assert -1 <= rho <= 1
    assert abs(spearman(np.exp(x), y ** 3) - rho) < 1e-12
    assert spearman(y, x) == pytest.approx(rho, abs=1e-15)


# --- pruning -----------------------------------------------------------------

def test_prune_below_threshold_keeps_all():
    r = RandomStream(4)
    f = frame(t=r.normal(200), a=r.normal(200), b=r.normal(200))
    rep = prune_collinear(f, "t")
    assert sorted(rep.kept) == ["a", "b", "t"] and not rep.dropped


def test_prune_greedy_rule():
    r = RandomStream(5)
    t = r.normal(500)
    f1 = t + 0.3 * r.normal(500)          # strongly tied to the target
    f2 = f1 + 0.2 * r.normal(500)         # near-copy of f1, further from target
    f = frame(t=t, f2=f2, f1=f1)
    rep = prune_collinear(f, "t")
    assert abs(spearman(f1, f2)) >= 0.8
    assert abs(rep.spearman_to_target["f1"]) > abs(rep.spearman_to_target["f2"])
    assert "f2" in rep.dropped and "f1" in rep.kept


def test_prune_order_stable():
    r = RandomStream(6)
    t = r.normal(300)
    cols = {"t": t, "x": t + 0.1 * r.normal(300), "y": t + 0.2 * r.normal(300), "z": r.normal(300)}
    a = prune_collinear(frame(**cols), "t")
    b = prune_collinear(frame(**dict(reversed(list(cols.items())))), "t")
    assert a.kept == b.kept and a.dropped == b.dropped


def test_prune_target_forced():
    f = frame(t=[1.0, 2.0, 3.0], a=[3.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        prune_collinear(f, "t", forced_drops=["t"])
    with pytest.raises(SchemaError):
        prune_collinear(f, "t", forced_drops=["nope"])


DEFAULT_FORCED = ["Miner Revenue", "Metcalfe-UTXO", "Interest rates", "Block size", "2y-10y difference"]


def test_prune_forced_list_yields_fifteen():
    r = RandomStream(7)
    cols = {"price": r.normal(400)}
    for name in DEFAULT_FORCED + [f"feature_{i}" for i in range(14)]:
        cols[name] = r.normal(400)
    f = frame(**cols)
    assert len(f.names) == 20
    rep = prune_collinear(f, "price", forced_drops=DEFAULT_FORCED)
    assert len(rep.kept) == 15
    assert set(rep.kept) | set(rep.dropped) == set(f.names)
    payload = json.loads(rep.to_json())
    assert {row["feature"] for row in payload["features"]} == set(f.names) - {"price"}


# --- normalization -----------------------------------------------------------

def test_fit_hand():
    n = fit_normalizer(frame(a=[1.0, 2.0, 3.0]))
    assert n.mean["a"] == 2.0
    assert abs(n.std["a"] - math.sqrt(2 / 3)) < 1e-15
    out = apply_normalizer(n, frame(a=[1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out.column("a"), [-1.224745, 0, 1.224745], atol=1e-6)


def test_fit_rows_only_and_moments():
    r = RandomStream(8)
    f = frame(a=r.normal(500) * 3 + 10, b=r.uniform(500, -2, 9))
    n = fit_normalizer(f, slice(0, 300))
    z = apply_normalizer(n, f)
    for c in z.names:
        x = z.column(c)[:300]
        assert abs(x.mean()) < 1e-12 and abs(x.std() - 1) < 1e-12
    back = apply_normalizer(n, z, "inverse")
    for c in f.names:
        np.testing.assert_allclose(back.column(c), f.column(c), rtol=0, atol=1e-12)


def test_normalizer_errors():
    with pytest.raises(ZeroVarianceError, match="'c'"):
        fit_normalizer(frame(a=[1.0, 2.0], c=[5.0, 5.0]))
    n = fit_normalizer(frame(a=[1.0, 2.0]))
    with pytest.raises(SchemaError):
        apply_normalizer(n, frame(b=[1.0, 2.0]))
    assert apply_normalizer(n, frame(a=[n.mean["a"]])).column("a")[0] == 0.0


def test_add_price_features():
    p = 100 + np.cumsum(RandomStream(9).uniform(100, -1, 1))
    out = add_price_features(frame(price=p), "price", vol_window=10)
    assert len(out) == 90
    assert not out.has_missing()
    assert str(out.dates[0]) == "2020-01-11"
    np.testing.assert_allclose(out.column("price_return")[0], p[10] / p[9] - 1)
