"""Experiment configuration: ``key = value`` lines with ``#`` comments."""
from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
from dataclasses import dataclass, field, fields
from typing import Optional

from .cells import FAMILIES
from .dataset import SplitSpec
from .errors import ConfigError, ConfigParseError

STRATEGIES = ("both", "long_short", "buy_sell", "none")


def _to_bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _to_int_list(text: str) -> tuple:
    return tuple(int(p) for p in _to_str_list(text))


def _to_str_list(text: str) -> tuple:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _optional(conv):
    def parse(text):
        return None if text == "" else conv(text)
    return parse


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_PARSERS = {
    int: int,
    float: float,
    bool: _to_bool,
    str: str,
    dt.date: dt.date.fromisoformat,
    "ints": _to_int_list,
    "strs": _to_str_list,
    "opt_int": _optional(int),
    "opt_float": _optional(float),
}


def _key(kind, default, help_text=""):
    return field(default=default, metadata={"kind": kind, "help": help_text})


@dataclass(frozen=True)
class ExperimentConfig:
    data_dir: str = _key(str, "", "directory of source CSVs; empty means synthetic data")
    synth_days: int = _key(int, 2000, "days of synthetic data")
    synth_features: int = _key(int, 3, "synthetic covariate count")
    target_column: str = _key(str, "price", "column to forecast")
    model_family: str = _key(str, "GRU1RecurrentDropout", "network family")
    layer_sizes: tuple = _key("ints", (), "override layer widths, e.g. 50,1")
    dropout_rate: Optional[float] = _key("opt_float", None, "input dropout; empty = family default")
    recurrent_dropout_rate: Optional[float] = _key("opt_float", None, "recurrent dropout; empty = family default")
    lookback: int = _key(int, 30, "days per input window")
    eval_lookbacks: tuple = _key("ints", (15, 30, 45, 60), "lookbacks compared by evaluate")
    train_start: dt.date = _key(dt.date, SplitSpec.train_start)
    train_end: dt.date = _key(dt.date, SplitSpec.train_end)
    val_start: dt.date = _key(dt.date, SplitSpec.val_start)
    val_end: dt.date = _key(dt.date, SplitSpec.val_end)
    test_start: dt.date = _key(dt.date, SplitSpec.test_start)
    test_end: dt.date = _key(dt.date, SplitSpec.test_end)
    epochs: int = _key(int, 100)
    batch_size: Optional[int] = _key("opt_int", None, "empty = 125 for SimpleNN, 100 otherwise")
    learning_rate: float = _key(float, 0.001)
    beta1: float = _key(float, 0.9)
    beta2: float = _key(float, 0.999)
    epsilon: float = _key(float, 1e-8)
    clip_norm: float = _key(float, 5.0)
    price_features: bool = _key(bool, True, "add MACD, return and volatility of the target")
    vol_window: int = _key(int, 30, "volatility window in days")
    collinearity_threshold: float = _key(float, 0.8)
    forced_drops: tuple = _key("strs", (), "features always removed")
    paper_mode_normalization: bool = _key(bool, False, "fit z-scores on all rows instead of the training range")
    strategy: str = _key(str, "both", "long_short, buy_sell, both or none")
    fee: float = _key(float, 0.008)
    buy_and_hold: bool = _key(bool, False, "add a buy-and-hold column to backtest output")
    sarima_baseline: bool = _key(bool, False, "also fit the SARIMA baseline in evaluate")
    sarima_orders: tuple = _key("strs", (), "p.d.q.P.D.Q entries; empty = full grid")
    seed: int = _key(int, 0)

    def __post_init__(self):
        problems = []
        if self.model_family not in FAMILIES:
            problems.append(f"model_family must be one of {', '.join(FAMILIES)}")
        if self.lookback < 1 or any(L < 1 for L in self.eval_lookbacks):
            problems.append("lookbacks must be positive")
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {', '.join(STRATEGIES)}")
        if self.epochs < 0:
            problems.append("epochs must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            problems.append("batch_size must be positive")
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        if not 0 <= self.fee < 1:
            problems.append("fee must lie in [0, 1)")
        if self.vol_window < 2:
            problems.append("vol_window must be at least 2")
        for rate in (self.dropout_rate, self.recurrent_dropout_rate):
            if rate is not None and not 0 <= rate < 1:
                problems.append("dropout rates must lie in [0, 1)")
        for entry in self.sarima_orders:
            parts = entry.split(".")
            if len(parts) != 6 or not all(p.isdigit() for p in parts):
                problems.append(f"sarima order {entry!r} must look like p.d.q.P.D.Q")
        if self.target_column in self.forced_drops:
            problems.append("target_column cannot be a forced drop")
        if problems:
            raise ConfigError("; ".join(problems))
        self.split_spec()

    def split_spec(self) -> SplitSpec:
        try:
            return SplitSpec(self.train_start, self.train_end, self.val_start,
                             self.val_end, self.test_start, self.test_end)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self) -> str:
        """Canonical form: every key, in declaration order."""
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


KEYS = {f.name: f for f in fields(ExperimentConfig)}


def parse_config(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"key {key!r} given twice", lineno)
        kind = KEYS[key].metadata["kind"]
        try:
            values[key] = _PARSERS[kind](value)
        except ValueError as exc:
            raise ConfigParseError(f"bad value for {key!r}: {exc}", lineno) from None
    return ExperimentConfig(**values)


def describe_keys() -> str:
    lines = []
    for f in fields(ExperimentConfig):
        default = _fmt(f.default)
        note = f.metadata.get("help", "")
        lines.append(f"{f.name} = {default}" + (f"    # {note}" if note else ""))
    return "\n".join(lines)
