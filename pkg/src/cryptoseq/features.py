"""Technical indicators, rank correlation, collinearity pruning and z-scoring."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.stats import rankdata

from .dataset import TimeSeriesFrame
from .errors import SchemaError, UndefinedCorrelationError, ZeroVarianceError

ANNUALIZATION_DAYS = 365
DEFAULT_VOL_WINDOW = 30


def _series(values, name="series") -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    return x


def ema(series, period: int) -> np.ndarray:
    """Exponential moving average with ``k = 2/(period+1)``, seeded by the first value."""
    x = _series(series)
    if period < 1:
        raise ValueError("period must be at least 1")
    k = 2.0 / (period + 1)
    # e_t = k x_t + (1-k) e_{t-1}, with e_0 = x_0
    out, _ = lfilter([k], [1.0, -(1.0 - k)], x, zi=[(1.0 - k) * x[0]])
    return out


def macd(price, fast: int = 12, slow: int = 26, signal: int = 9):
    """Return ``(macd_line, signal_line, histogram)``."""
    p = _series(price, "price")
    line = ema(p, fast) - ema(p, slow)
    sig = ema(line, signal)
    return line, sig, line - sig


def daily_returns(price) -> np.ndarray:
    p = _series(price, "price")
    if p.size < 2:
        raise ValueError("need at least two prices for a return")
    if np.any(~(p > 0)):
        raise ValueError("prices must be strictly positive")
    return p[1:] / p[:-1] - 1.0


def annualized_volatility(returns, window: int = DEFAULT_VOL_WINDOW) -> np.ndarray:
    """Trailing population std of ``window`` returns, times sqrt(365).

    Output has ``len(returns) - window + 1`` entries; entry ``i`` covers
    returns ``i .. i+window-1``.
    """
    r = _series(returns, "returns")
    if window < 2:
        raise ValueError("window must be at least 2")
    if window > r.size:
        raise ValueError(f"window {window} exceeds series length {r.size}")
    view = np.lib.stride_tricks.sliding_window_view(r, window)
    return view.std(axis=1) * math.sqrt(ANNUALIZATION_DAYS)


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation of average ranks."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two observations")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    saa = float(np.dot(ra, ra))
    sbb = float(np.dot(rb, rb))
    if saa == 0.0 or sbb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    rho = float(np.dot(ra, rb)) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, rho))


# --- collinearity pruning ----------------------------------------------------

@dataclass
class FeatureReport:
    target: str
    spearman_to_target: dict = field(default_factory=dict)
    kept: list = field(default_factory=list)
    dropped: dict = field(default_factory=dict)  # feature -> reason

    def to_json(self) -> str:
        rows = []
        for name in sorted(self.spearman_to_target):
            rows.append({
                "feature": name,
                "rho": self.spearman_to_target[name],
                "status": "kept" if name in self.kept else "dropped",
                "reason": self.dropped.get(name, ""),
            })
        return json.dumps({"target": self.target, "features": rows}, indent=2) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def prune_collinear(frame: TimeSeriesFrame, target: str, threshold: float = 0.8,
                    forced_drops: Iterable[str] = ()) -> FeatureReport:
    """Drop features that are near-duplicates of another feature.

    Forced drops go first.  Then every pair of remaining features (target
    excluded), visited in name order, whose ``|rho| >= threshold`` loses the
    member less correlated with the target; ties drop the later name.
    """
    forced = list(dict.fromkeys(forced_drops))
    names = sorted(frame.names)
    if target not in names:
        raise SchemaError(f"target column {target!r} not in frame")
    if target in forced:
        raise ValueError(f"target {target!r} cannot be a forced drop")
    missing = [f for f in forced if f not in names]
    if missing:
        raise SchemaError(f"forced drops not in frame: {missing}")

    y = frame.column(target)
    report = FeatureReport(target=target)
    for name in names:
        if name != target:
            report.spearman_to_target[name] = spearman(frame.column(name), y)
    for name in forced:
        report.dropped[name] = "forced"

    alive = [n for n in names if n != target and n not in report.dropped]
    cache: dict = {}
    for i, a in enumerate(alive):
        if a in report.dropped:
            continue
        for b in alive[i + 1:]:
            if b in report.dropped:
                continue
            rho = cache.setdefault((a, b), spearman(frame.column(a), frame.column(b)))
            if abs(rho) >= threshold:
                ra, rb = abs(report.spearman_to_target[a]), abs(report.spearman_to_target[b])
                loser, winner = (a, b) if ra < rb else (b, a)
                report.dropped[loser] = f"|rho|={abs(rho):.6f} with {winner}"
                if loser == a:
                    break
    report.kept = [target] + [n for n in names if n != target and n not in report.dropped]
    return report


# --- normalization -----------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    mean: dict
    std: dict

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean, "std": self.std}, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Normalizer":
        d = json.loads(text)
        return cls(dict(d["mean"]), dict(d["std"]))


def fit_normalizer(frame: TimeSeriesFrame, rows=slice(None)) -> Normalizer:
    """Population mean/std of every column over ``rows`` (slice, mask or indices)."""
    means, stds = {}, {}
    for name in frame.names:
        x = frame.column(name)[rows]
        if x.size == 0:
            raise ValueError("no rows to fit the normalizer on")
        if np.isnan(x).any():
            raise ValueError(f"column {name!r} has missing values in the fit rows")
        mu = float(np.mean(x))
        sd = float(np.sqrt(np.mean((x - mu) ** 2)))
        if not sd > 0:
            raise ZeroVarianceError(f"column {name!r} is constant over the fit rows")
        means[name], stds[name] = mu, sd
    return Normalizer(means, stds)


def apply_normalizer(n: Normalizer, frame: TimeSeriesFrame, direction: str = "forward") -> TimeSeriesFrame:
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    cols = {}
    for name in frame.names:
        if name not in n.mean:
            raise SchemaError(f"normalizer has no statistics for column {name!r}")
        mu, sd = n.mean[name], n.std[name]
        x = frame.column(name)
        cols[name] = (x - mu) / sd if direction == "forward" else x * sd + mu
    return TimeSeriesFrame(frame.dates, cols)


def denormalize(n: Normalizer, column: str, values) -> np.ndarray:
    if column not in n.mean:
        raise SchemaError(f"normalizer has no statistics for column {column!r}")
    return np.asarray(values, dtype=np.float64) * n.std[column] + n.mean[column]


# --- derived columns ---------------------------------------------------------

def add_price_features(frame: TimeSeriesFrame, price_column: str,
                       vol_window: int = DEFAULT_VOL_WINDOW) -> TimeSeriesFrame:
    """Append MACD line/signal/histogram, daily return and annualized volatility.

    Rows too early to carry a return or a full volatility window are removed,
    so the result starts ``vol_window`` days after the input.
    """
    p = frame.column(price_column)
    line, sig, hist = macd(p)
    ret = np.concatenate([[math.nan], daily_returns(p)])
    vol = np.concatenate([np.full(vol_window, math.nan), annualized_volatility(ret[1:], vol_window)])
    out = frame.assign(**{
        f"{price_column}_macd": line,
        f"{price_column}_macd_signal": sig,
        f"{price_column}_macd_hist": hist,
        f"{price_column}_return": ret,
        f"{price_column}_volatility": vol,
    })
    return out.take(slice(vol_window, None))
