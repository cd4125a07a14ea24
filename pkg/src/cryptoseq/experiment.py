"""Pipeline stages: data -> features -> train -> evaluate -> backtest.

Each stage reads and writes files in one run directory, named by the digest
of the resolved configuration.  Data files carry no timestamps; run
metadata goes to ``run.log`` only.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import sarima
from .cells import NetworkSpec, init_network, save_network
from .config import ExperimentConfig
from .dataset import (TimeSeriesFrame, forward_fill, load_directory, make_windows, read_csv,
                      reindex_daily, split, synth_generate, write_csv)
from .features import (Normalizer, add_price_features, apply_normalizer, denormalize,
                       fit_normalizer, prune_collinear)
from .numerics import RandomStream
from .training import TrainConfig, persistence_rmse, predict, rmse, train, write_report

log = logging.getLogger("cryptoseq")

FEATURES_CSV = "features.csv"
PREDICTIONS_CSV = "predictions.csv"


class MissingInputError(FileNotFoundError):
    """A stage's prerequisite artifact is absent."""


@dataclass
class Run:
    cfg: ExperimentConfig
    dir: Path

    @classmethod
    def open(cls, cfg: ExperimentConfig, out) -> "Run":
        d = Path(out) / cfg.digest()
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
        return cls(cfg, d)

    def path(self, name: str) -> Path:
        return self.dir / name

    def require(self, name: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingInputError(f"{p} not found; run the '{producer}' command first")
        return p


# --- data --------------------------------------------------------------------

def load_source(cfg: ExperimentConfig) -> TimeSeriesFrame:
    if cfg.data_dir:
        if not Path(cfg.data_dir).is_dir():
            raise MissingInputError(f"data_dir {cfg.data_dir} does not exist")
        return load_directory(cfg.data_dir)
    return synth_generate(cfg.seed, cfg.synth_days, cfg.synth_features)


def clean(frame: TimeSeriesFrame) -> TimeSeriesFrame:
    """Daily axis, start at the first date every source has data, forward-fill."""
    frame = reindex_daily(frame)
    starts = []
    for name in frame.names:
        valid = np.flatnonzero(~np.isnan(frame.column(name)))
        if valid.size == 0:
            raise MissingInputError(f"column {name!r} has no values")
        starts.append(valid[0])
    first = max(starts)
    if first:
        log.info("dropping %d leading rows until every column has data (from %s)", first, frame.dates[first])
        frame = frame.take(slice(first, None))
    return forward_fill(frame)


def stage_synth(run: Run) -> Path:
    cfg = run.cfg
    out = run.path("data")
    out.mkdir(exist_ok=True)
    path = out / "synthetic.csv"
    write_csv(synth_generate(cfg.seed, cfg.synth_days, cfg.synth_features), path)
    return path


def _fit_rows(cfg: ExperimentConfig, frame: TimeSeriesFrame):
    if cfg.paper_mode_normalization:
        return slice(None)
    spec = cfg.split_spec()
    lo, hi = np.datetime64(spec.train_start, "D"), np.datetime64(spec.train_end, "D")
    rows = (frame.dates >= lo) & (frame.dates <= hi)
    if not rows.any():
        raise MissingInputError("no rows fall in the training range")
    return rows


def stage_features(run: Run) -> Path:
    cfg = run.cfg
    if not cfg.data_dir:
        stage_synth(run)
    frame = clean(load_source(cfg))
    frame.column(cfg.target_column)
    if cfg.price_features:
        frame = add_price_features(frame, cfg.target_column, cfg.vol_window)
    rows = _fit_rows(cfg, frame)
    report = prune_collinear(frame.take(rows), cfg.target_column, cfg.collinearity_threshold,
                             cfg.forced_drops)
    report.write(run.path("feature_report.json"))
    selected = frame.select(report.kept)
    path = run.path(FEATURES_CSV)
    write_csv(selected, path)
    log.info("kept %d of %d features", len(report.kept), len(frame.names))
    return path


# --- modelling ---------------------------------------------------------------

@dataclass
class Prepared:
    raw: TimeSeriesFrame
    normalizer: Normalizer
    train: object
    val: object
    test: object


def prepare(cfg: ExperimentConfig, frame: TimeSeriesFrame, lookback: int) -> Prepared:
    normalizer = fit_normalizer(frame, _fit_rows(cfg, frame))
    z = apply_normalizer(normalizer, frame)
    parts = split(z, cfg.split_spec())
    sets = []
    for part in parts:
        before = z.take(z.dates < part.dates[0])
        context = before if len(before) >= lookback else None
        sets.append(make_windows(part, lookback, cfg.target_column, context=context))
    return Prepared(frame, normalizer, *sets)


def _fit_model(cfg: ExperimentConfig, data: Prepared, lookback: int):
    spec = NetworkSpec.for_family(
        cfg.model_family, lookback, data.train.width,
        layer_sizes=cfg.layer_sizes or None,
        dropout_rate=cfg.dropout_rate, recurrent_dropout_rate=cfg.recurrent_dropout_rate)
    master = RandomStream(cfg.seed)
    net = init_network(spec, master.split())
    overrides = dict(epochs=cfg.epochs, learning_rate=cfg.learning_rate, beta1=cfg.beta1,
                     beta2=cfg.beta2, epsilon=cfg.epsilon, clip_norm=cfg.clip_norm,
                     seed=master.next_u64())
    if cfg.batch_size is not None:
        overrides["batch_size"] = cfg.batch_size
    tcfg = TrainConfig.for_family(cfg.model_family, **overrides)
    log.info("training %s, lookback %d, %d parameters", cfg.model_family, lookback, net.param_count())
    return train(net, data.train, data.val, tcfg, test_set=data.test)


def _load_features(run: Run) -> TimeSeriesFrame:
    return read_csv(run.require(FEATURES_CSV, "features"))


def stage_train(run: Run) -> Path:
    cfg = run.cfg
    data = prepare(cfg, _load_features(run), cfg.lookback)
    net, report = _fit_model(cfg, data, cfg.lookback)
    write_report(report, run.path("train_report.csv"), run.path("train_summary.json"))
    save_network(net, run.path("params.bin"))
    run.path("normalizer.json").write_text(data.normalizer.to_json(), encoding="utf-8")
    target = cfg.target_column
    predicted = denormalize(data.normalizer, target, predict(net, data.test))
    # source values, not a normalize/denormalize round trip
    actual = data.raw.column(target)[np.searchsorted(data.raw.dates, data.test.target_dates)]
    with run.path(PREDICTIONS_CSV).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "predicted", "actual"])
        for d, p, a in zip(data.test.target_dates, predicted, actual):
            w.writerow([str(d), repr(float(p)), repr(float(a))])
    log.info("best epoch %s, rmse train %s, test %s", report.best_epoch, report.rmse_train, report.rmse_test)
    return run.path("train_summary.json")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _sarima_row(cfg: ExperimentConfig, data: Prepared):
    z = apply_normalizer(data.normalizer, data.raw).column(cfg.target_column)
    dates = data.raw.dates
    tr_mask = np.isin(dates, data.train.target_dates)
    te_mask = np.isin(dates, data.test.target_dates)
    history_end = int(np.flatnonzero(tr_mask)[-1]) + 1
    if cfg.sarima_orders:
        grid = [sarima.SarimaOrder(*map(int, e.split(".")), s=7) for e in cfg.sarima_orders]
    else:
        grid = sarima.default_grid()
    fit = sarima.fit(z[:history_end], grid)
    first = fit.order.n_diff + fit.order.n_cond
    preds = sarima.rolling_one_step(fit, z, first)
    idx = np.arange(first, z.size)
    tr = idx[tr_mask[idx]]
    te = idx[te_mask[idx]]
    return ("sarima", rmse(preds[tr - first], z[tr]), rmse(preds[te - first], z[te])), fit.to_json()


def stage_evaluate(run: Run) -> Path:
    cfg = run.cfg
    frame = _load_features(run)
    rows = []
    for lookback in cfg.eval_lookbacks:
        data = prepare(cfg, frame, lookback)
        _, report = _fit_model(cfg, data, lookback)
        rows.append((lookback, report.rmse_train, report.rmse_test))
    path = run.path("table2.csv")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lookback", "rmse_train", "rmse_test"])
        for lookback, a, b in rows:
            w.writerow([lookback, _fmt(a), _fmt(b)])

    data = prepare(cfg, frame, cfg.lookback)
    baselines = [("persistence", persistence_rmse(data.train), persistence_rmse(data.test))]
    if cfg.sarima_baseline:
        row, fit_json = _sarima_row(cfg, data)
        baselines.append(row)
        run.path("sarima_fit.json").write_text(fit_json, encoding="utf-8")
    with run.path("baselines.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "rmse_train", "rmse_test"])
        for name, a, b in baselines:
            w.writerow([name, _fmt(a), _fmt(b)])
    return path


# --- trading -----------------------------------------------------------------

def stage_backtest(run: Run) -> list:
    cfg = run.cfg
    pred_path = run.require(PREDICTIONS_CSV, "train")
    with pred_path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    if not rows:
        raise MissingInputError(f"{pred_path} has no predictions")
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    predicted = np.array([float(r[1]) for r in rows])
    actual = np.array([float(r[2]) for r in rows])
    frame = _load_features(run)
    pos = int(np.searchsorted(frame.dates, dates[0]))
    if pos == 0 or frame.dates[pos] != dates[0]:
        raise MissingInputError("no close available for the day before the first prediction")
    closes = np.concatenate([[frame.column(cfg.target_column)[pos - 1]], actual])
    sig = bt.signals(predicted, closes[:-1])
    bench = bt.buy_and_hold(closes) if cfg.buy_and_hold else None
    runners = {"long_short": bt.run_long_short, "buy_sell": bt.run_buy_sell}
    chosen = list(runners) if cfg.strategy == "both" else ([] if cfg.strategy == "none" else [cfg.strategy])
    written, summary = [], {}
    for name in chosen:
        report = runners[name](sig, closes, fee=cfg.fee, dates=dates)
        report.write_values(run.path(f"backtest_{name}.csv"), bench)
        report.write_ledger(run.path(f"ledger_{name}.csv"))
        summary[name] = {"final_value": report.final_value, "trades": len(report.trades),
                         "bankrupt_on": None if report.bankrupt_on is None else str(report.bankrupt_on)}
        written.append(run.path(f"backtest_{name}.csv"))
    run.path("backtest_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return written


def stage_pipeline(run: Run) -> None:
    stage_features(run)
    stage_train(run)
    stage_evaluate(run)
    stage_backtest(run)


STAGES = {
    "synth": stage_synth,
    "features": stage_features,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "backtest": stage_backtest,
    "pipeline": stage_pipeline,
}
