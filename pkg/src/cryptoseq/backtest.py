"""Daily trading simulations driven by next-day price forecasts.

Price convention: ``closes`` has one more entry than ``signals``.
``closes[0]`` is the close before the first trading day and ``closes[t]`` is
the close of trading day ``t`` (1-based), so day ``t`` trades at
``closes[t-1]`` and is marked at ``closes[t]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

DEFAULT_FEE = 0.008


@dataclass(frozen=True)
class Trade:
    date: object
    side: str  # buy, sell, short, cover
    price: float
    notional: float
    fee: float


@dataclass
class BacktestReport:
    dates: np.ndarray
    signals: np.ndarray
    daily_value: np.ndarray
    trades: list = field(default_factory=list)
    bankrupt_on: Optional[object] = None

    @property
    def final_value(self) -> float:
        return float(self.daily_value[-1]) if len(self.daily_value) else 1.0

    def write_values(self, path, benchmark: Optional[np.ndarray] = None) -> None:
        """``date,signal,portfolio_value`` rows, plus ``buy_and_hold`` if given."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "signal", "portfolio_value"] + (["buy_and_hold"] if benchmark is not None else []))
            for i, d in enumerate(self.dates):
                row = [str(d), int(self.signals[i]), repr(float(self.daily_value[i]))]
                if benchmark is not None:
                    row.append(repr(float(benchmark[i])))
                w.writerow(row)

    def write_ledger(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "side", "price", "notional", "fee"])
            for t in self.trades:
                w.writerow([str(t.date), t.side, repr(t.price), repr(t.notional), repr(t.fee)])


def signals(predicted, prev_close) -> np.ndarray:
    """+1 where the forecast exceeds the prior close, -1 below it, 0 on a tie."""
    p = np.asarray(predicted, dtype=np.float64)
    c = np.asarray(prev_close, dtype=np.float64)
    if p.shape != c.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {c.size} closes")
    return np.sign(p - c).astype(np.int64)


def _inputs(sig, closes, fee, dates):
    s = np.asarray(sig)
    c = np.asarray(closes, dtype=np.float64)
    if s.ndim != 1 or c.shape != (s.size + 1,):
        raise ValueError(f"need {s.size + 1} closes (one prior close) for {s.size} signals, got {c.size}")
    if not np.all(np.isin(s, (-1, 0, 1))):
        raise ValueError("signals must be -1, 0 or +1")
    if not np.all(c > 0):
        raise ValueError("prices must be strictly positive")
    if not 0 <= fee < 1:
        raise ValueError("fee must lie in [0, 1)")
    d = np.arange(1, s.size + 1) if dates is None else np.asarray(dates)
    if d.shape != s.shape:
        raise ValueError("dates must align with signals")
    return s.astype(np.int64), c, d


def run_long_short(sig, closes, fee: float = DEFAULT_FEE, dates=None) -> BacktestReport:
    """Each signalled day, the whole portfolio goes long or short at the prior
    close and settles at the day's close, paying ``fee`` on both legs."""
    s, c, d = _inputs(sig, closes, fee, dates)
    values = np.empty(s.size)
    report = BacktestReport(d, s, values)
    v = 1.0
    for t in range(s.size):
        if v > 0 and s[t] != 0:
            entry_fee = v * fee
            invested = v - entry_fee
            ret = c[t + 1] / c[t] - 1.0
            gross = invested * (1.0 + s[t] * ret)
            long = s[t] > 0
            report.trades.append(Trade(d[t], "buy" if long else "short", float(c[t]), v, entry_fee))
            if gross <= 0:
                v = 0.0
                report.bankrupt_on = d[t]
            else:
                exit_fee = gross * fee
                report.trades.append(Trade(d[t], "sell" if long else "cover", float(c[t + 1]), gross, exit_fee))
                v = gross - exit_fee
        values[t] = v
    return report


def run_buy_sell(sig, closes, fee: float = DEFAULT_FEE, dates=None) -> BacktestReport:
    """Cash until a +1 signal, then invested until a -1 signal.

    Trades execute at the prior close; the value is marked at each day's close.
    """
    s, c, d = _inputs(sig, closes, fee, dates)
    values = np.empty(s.size)
    report = BacktestReport(d, s, values)
    cash, coins = 1.0, 0.0
    for t in range(s.size):
        price = float(c[t])
        if coins == 0.0 and s[t] > 0 and cash > 0:
            paid = cash * fee
            coins = (cash - paid) / price
            report.trades.append(Trade(d[t], "buy", price, cash, paid))
            cash = 0.0
        elif coins > 0.0 and s[t] < 0:
            proceeds = coins * price
            paid = proceeds * fee
            report.trades.append(Trade(d[t], "sell", price, proceeds, paid))
            cash, coins = proceeds - paid, 0.0
        values[t] = cash + coins * c[t + 1]
    return report


def buy_and_hold(closes) -> np.ndarray:
    """Fee-free value of one unit invested at ``closes[0]``, per trading day."""
    c = np.asarray(closes, dtype=np.float64)
    return c[1:] / c[0]


def read_values(path) -> tuple[list, np.ndarray, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0][:3] != ["date", "signal", "portfolio_value"]:
        raise ValueError(f"{path}: not a backtest value file")
    body = rows[1:]
    return ([r[0] for r in body], np.array([int(r[1]) for r in body]),
            np.array([float(r[2]) for r in body]))
