import csv
import datetime as dt
import json

import numpy as np
import pytest

from cryptoseq import experiment
from cryptoseq.cells import load_network
from cryptoseq.cli import main
from cryptoseq.config import ExperimentConfig, parse_config
from cryptoseq.dataset import TimeSeriesFrame, read_csv, write_csv
from cryptoseq.errors import ConfigError, ConfigParseError, DivergenceError

SMALL = """\
synth_days = 700
lookback = 5
eval_lookbacks = 5,10
epochs = 2
layer_sizes = 4,1
"""


def write_cfg(tmp_path, text=SMALL, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(tmp_path, command, text=SMALL, *extra):
    cfg = write_cfg(tmp_path, text)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / "runs"), *extra])


def run_dir(tmp_path, text=SMALL):
    return tmp_path / "runs" / parse_config(text).digest()


# --- config ------------------------------------------------------------------

def test_parse_lookback():
    assert parse_config("lookback = 30").lookback == 30


def test_empty_config_is_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.model_family == "GRU1RecurrentDropout" and cfg.lookback == 30
    assert cfg.eval_lookbacks == (15, 30, 45, 60) and cfg.fee == 0.008
    assert cfg.train_end == dt.date(2018, 6, 30) and cfg.test_start == dt.date(2019, 1, 1)


def test_parse_error_reports_line():
    with pytest.raises(ConfigParseError, match="line 1"):
        parse_config("lookback = banana")
    with pytest.raises(ConfigParseError, match="line 2"):
        parse_config("# comment\njust words\n")


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError, match=r"line 3: unknown key 'lookbak'") as info:
        parse_config("epochs = 3\n\nlookbak = 30\n")
    assert not isinstance(info.value, ConfigParseError)


def test_comments_lists_and_optionals():
    cfg = parse_config("forced_drops = a, b  # trailing\nbatch_size =\ndropout_rate = 0.2\n"
                       "paper_mode_normalization = yes\ntest_end = 2019-05-31\n")
    assert cfg.forced_drops == ("a", "b") and cfg.batch_size is None
    assert cfg.dropout_rate == 0.2 and cfg.paper_mode_normalization
    assert cfg.test_end == dt.date(2019, 5, 31)


@pytest.mark.parametrize("text", [
    "model_family = RNN", "strategy = hodl", "lookback = 0", "val_start = 2018-01-01",
    "forced_drops = price", "fee = 1.5", "epochs = 1\nepochs = 2",
])
def test_semantic_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_canonical_text_round_trip():
    cfg = parse_config(SMALL + "forced_drops = x,y\ndropout_rate = 0.1\n")
    assert parse_config(cfg.to_text()) == cfg
    assert cfg.digest() == parse_config(cfg.to_text()).digest()
    assert cfg.digest() != cfg.replace(seed=1).digest()


# --- commands ----------------------------------------------------------------

def test_config_error_exit_code(tmp_path, capsys):
    assert run_cli(tmp_path, "train", "lookback = banana\n") == 1
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0 and "line 1" in err
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 1


def test_missing_prerequisites_exit_2(tmp_path, capsys):
    assert run_cli(tmp_path, "train") == 2
    assert "features" in capsys.readouterr().err
    assert run_cli(tmp_path, "backtest") == 2
    assert run_cli(tmp_path, "features", SMALL + "data_dir = /nonexistent/dir\n") == 2


def test_divergence_exit_3(tmp_path, monkeypatch):
    assert run_cli(tmp_path, "features") == 0

    def explode(*args, **kwargs):
        raise DivergenceError(0, 3, float("nan"))
    monkeypatch.setattr(experiment, "train", explode)
    assert run_cli(tmp_path, "train") == 3


def test_synth_command(tmp_path):
    assert run_cli(tmp_path, "synth") == 0
    frame = read_csv(run_dir(tmp_path) / "data" / "synthetic.csv")
    assert len(frame) == 700 and frame.names[0] == "price"


def test_train_zero_epochs(tmp_path):
    text = SMALL.replace("epochs = 2", "epochs = 0")
    assert run_cli(tmp_path, "features", text) == 0
    assert run_cli(tmp_path, "train", text) == 0
    d = run_dir(tmp_path, text)
    assert (d / "train_report.csv").read_text() == "epoch,train_loss,val_loss\n"
    assert json.loads((d / "train_summary.json").read_text())["best_epoch"] is None


def test_evaluate_table_over_default_lookbacks(tmp_path):
    text = SMALL.replace("eval_lookbacks = 5,10\n", "").replace("epochs = 2", "epochs = 1")
    assert run_cli(tmp_path, "features", text) == 0
    assert run_cli(tmp_path, "evaluate", text) == 0
    with (run_dir(tmp_path, text) / "table2.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["lookback", "rmse_train", "rmse_test"]
    assert [r[0] for r in rows[1:]] == ["15", "30", "45", "60"]
    assert all(float(r[1]) >= 0 and float(r[2]) >= 0 for r in rows[1:])


def test_pipeline_artifacts_are_schema_valid(tmp_path):
    text = SMALL + "buy_and_hold = true\nsarima_baseline = true\nsarima_orders = 1.1.0.0.0.0, 0.1.1.0.0.0\n"
    assert run_cli(tmp_path, "pipeline", text) == 0
    d = run_dir(tmp_path, text)
    assert (d / "config.txt").read_text() == parse_config(text).to_text()
    header = lambda name: (d / name).read_text().splitlines()[0]
    assert header("train_report.csv") == "epoch,train_loss,val_loss"
    assert header("predictions.csv") == "date,predicted,actual"
    assert header("backtest_long_short.csv") == "date,signal,portfolio_value,buy_and_hold"
    assert header("ledger_buy_sell.csv") == "date,side,price,notional,fee"
    assert header("baselines.csv") == "model,rmse_train,rmse_test"
    assert "sarima" in (d / "baselines.csv").read_text()
    summary = json.loads((d / "train_summary.json").read_text())
    assert set(summary) == {"best_epoch", "rmse_train", "rmse_test"}
    report = json.loads((d / "feature_report.json").read_text())
    assert all(-1 <= row["rho"] <= 1 for row in report["features"])
    net = load_network(d / "params.bin")
    assert net.spec.lookback == 5 and net.spec.layer_sizes == (4, 1)
    preds = (d / "predictions.csv").read_text().splitlines()
    assert preds[1].startswith("2019-01-01,") and len(preds) == 182


def test_pipeline_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = write_cfg(tmp_path)
    assert main(["pipeline", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["pipeline", "--config", str(cfg), "--out", str(b)]) == 0
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "run.log")
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name != "run.log")
    assert files_a == files_b and len(files_a) > 10
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_seed_flag_changes_run(tmp_path):
    assert run_cli(tmp_path, "synth", SMALL, "--seed", "9") == 0
    assert (tmp_path / "runs" / parse_config(SMALL + "seed = 9\n").digest()).is_dir()


def test_real_csv_directory(tmp_path):
    # daily price plus a weekday-only market series with a late start
    days = np.arange(np.datetime64("2017-01-01"), np.datetime64("2019-07-01"))
    price = 1000 + np.cumsum(np.sin(np.arange(days.size) / 7.0) + 0.5)
    data = tmp_path / "data"
    data.mkdir()
    write_csv(TimeSeriesFrame(days, {"btc": price}), data / "btc_price.csv")
    weekday = np.array([np.datetime64(d, "D").astype(dt.date).weekday() < 5 for d in days])
    keep = weekday & (days >= np.datetime64("2017-01-04"))
    gold = 1200 + np.cos(np.arange(days.size) / 11.0) * 30
    write_csv(TimeSeriesFrame(days[keep], {"gold": gold[keep]}), data / "gold.csv")
    text = SMALL.replace("synth_days = 700\n", "") + f"data_dir = {data}\ntarget_column = btc\n"
    assert run_cli(tmp_path, "features", text) == 0
    feats = read_csv(run_dir(tmp_path, text) / "features.csv")
    assert str(feats.dates[0]) > "2017-01-04" and not feats.has_missing() and feats.is_contiguous()
    assert run_cli(tmp_path, "train", text) == 0
    assert run_cli(tmp_path, "backtest", text) == 0
