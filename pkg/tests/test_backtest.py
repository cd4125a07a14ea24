import numpy as np
import pytest

from cryptoseq.backtest import (buy_and_hold, read_values, run_buy_sell, run_long_short, signals)
from cryptoseq.numerics import RandomStream


def test_signals():
    np.testing.assert_array_equal(signals([105, 95, 100], [100, 100, 100]), [1, -1, 0])
    with pytest.raises(ValueError):
        signals([1.0], [1.0, 2.0])


def test_tie_means_no_trade():
    rep = run_long_short(signals([100.0], [100.0]), [100.0, 120.0])
    assert rep.final_value == 1.0 and rep.trades == []


def test_long_short_flat():
    rep = run_long_short([0, 0, 0], [10, 11, 9, 12])
    assert rep.final_value == 1.0 and not rep.trades
    np.testing.assert_array_equal(rep.daily_value, 1.0)


def test_long_short_hand_ledger():
    up = run_long_short([1], [100.0, 105.0])
    down = run_long_short([-1], [100.0, 95.0])
    assert abs(up.final_value - 1.0332672) < 1e-12
    assert abs(down.final_value - 1.0332672) < 1e-12
    assert [t.side for t in up.trades] == ["buy", "sell"]
    assert [t.side for t in down.trades] == ["short", "cover"]


def test_buy_sell_hand_ledger():
    rep = run_buy_sell([1, -1], [100.0, 110.0, 120.0])
    assert abs(rep.final_value - 1.0824704) < 1e-12
    buy, sell = rep.trades
    assert (buy.side, buy.price, buy.notional) == ("buy", 100.0, 1.0)
    assert abs(buy.fee - 0.008) < 1e-15
    assert sell.side == "sell" and sell.price == 110.0
    assert abs(sell.notional - 0.00992 * 110) < 1e-12


def test_buy_sell_never_positive():
    rep = run_buy_sell([-1, 0, -1], [5.0, 6.0, 7.0, 8.0])
    assert rep.final_value == 1.0 and not rep.trades


def test_buy_sell_holds_on_repeated_buys():
    sig = [1] + [1] * 10 + [-1]
    closes = 100 + np.arange(13.0)
    rep = run_buy_sell(sig, closes)
    assert [t.side for t in rep.trades] == ["buy", "sell"]


def test_buy_sell_marks_to_close():
    rep = run_buy_sell([1, 0], [100.0, 110.0, 121.0])
    assert abs(rep.daily_value[0] - 0.992 * 1.1) < 1e-15
    assert abs(rep.daily_value[1] - 0.992 * 1.21) < 1e-15


def random_path(r, n):
    closes = 100 * np.exp(np.cumsum(np.concatenate([[0.0], 0.03 * r.normal(n)])))
    sig = np.array([r.below(3) for _ in range(n)]) - 1
    return sig, closes


def test_fee_accounting_closes():
    r = RandomStream(1)
    for _ in range(20):
        sig, closes = random_path(r, 60)
        rep = run_long_short(sig, closes)
        v = 1.0
        for t in rep.trades:
            assert abs(t.fee - 0.008 * t.notional) < 1e-15
            if t.side in ("buy", "short"):
                assert t.notional == v
                v -= t.fee
            else:
                v = t.notional - t.fee
        assert abs(v - rep.final_value) < 1e-12
        bs = run_buy_sell(sig, closes)
        for t in bs.trades:
            assert abs(t.fee - 0.008 * t.notional) < 1e-15


def test_zero_fee_all_long_is_buy_and_hold():
    r = RandomStream(2)
    sig, closes = random_path(r, 180)
    rep = run_long_short(np.ones(180, dtype=int), closes, fee=0.0)
    assert abs(rep.final_value - closes[-1] / closes[0]) < 1e-12
    np.testing.assert_allclose(rep.daily_value, buy_and_hold(closes), rtol=1e-12)


def test_fee_monotonicity():
    r = RandomStream(3)
    for _ in range(100):
        sig, closes = random_path(r, 40)
        for run in (run_long_short, run_buy_sell):
            finals = [run(sig, closes, fee=f).final_value for f in (0.0, 0.004, 0.008, 0.02)]
            assert all(a >= b for a, b in zip(finals, finals[1:]))


def test_buy_sell_never_short():
    r = RandomStream(4)
    sig, closes = random_path(r, 200)
    rep = run_buy_sell(sig, closes)
    holding = False
    for t in rep.trades:
        assert (t.side == "buy") != holding
        holding = t.side == "buy"
    assert np.all(rep.daily_value > 0)


def test_bankruptcy_recorded():
    rep = run_long_short([-1, 1], [100.0, 250.0, 300.0], dates=["d1", "d2"])
    assert rep.bankrupt_on == "d1"
    np.testing.assert_array_equal(rep.daily_value, [0.0, 0.0])


def test_input_validation():
    with pytest.raises(ValueError):
        run_long_short([1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        run_buy_sell([2], [1.0, 2.0])
    with pytest.raises(ValueError):
        run_buy_sell([1], [0.0, 2.0])


def test_csv_outputs(tmp_path):
    dates = np.array(["2019-01-01", "2019-01-02"], dtype="datetime64[D]")
    rep = run_buy_sell([1, -1], [100.0, 110.0, 120.0], dates=dates)
    rep.write_values(tmp_path / "v.csv")
    rep.write_ledger(tmp_path / "l.csv")
    d, s, v = read_values(tmp_path / "v.csv")
    assert d == ["2019-01-01", "2019-01-02"] and list(s) == [1, -1]
    np.testing.assert_array_equal(v, rep.daily_value)
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "date,side,price,notional,fee" and len(lines) == 3
    rep.write_values(tmp_path / "b.csv", benchmark=buy_and_hold([100.0, 110.0, 120.0]))
    assert (tmp_path / "b.csv").read_text().splitlines()[0].endswith(",buy_and_hold")
