"""Command-line driver.

Exit status: 0 success, 1 configuration error, 2 missing or unusable
input, 3 numerical divergence during training.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, describe_keys, parse_config
from .dataset import EmptySplitError
from .errors import (ConfigError, DivergenceError, LeadingGapError, SchemaError, WarmupError,
                     ZeroVarianceError)
from .experiment import STAGES, Run

EXIT_CONFIG, EXIT_INPUT, EXIT_DIVERGED = 1, 2, 3

_INPUT_ERRORS = (FileNotFoundError, SchemaError, LeadingGapError, WarmupError,
                 EmptySplitError, ZeroVarianceError)

log = logging.getLogger("cryptoseq")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cryptoseq",
        description="Next-day price forecasting with recurrent networks, plus trading backtests.",
        epilog="configuration keys and defaults:\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", choices=list(STAGES))
    p.add_argument("--config", type=Path, help="key = value file (defaults apply to omitted keys)")
    p.add_argument("--out", type=Path, default=Path("runs"), help="parent of the run directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    return p


def _setup_logging(run_dir: Path) -> logging.Handler:
    level = os.environ.get("CRYPTOSEQ_LOG", "WARNING").upper()
    log.setLevel(logging.DEBUG)
    log.propagate = False
    for h in list(log.handlers):
        log.removeHandler(h)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(getattr(logging, level, logging.WARNING))
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    filelog = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    filelog.setLevel(logging.INFO)
    filelog.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(console)
    log.addHandler(filelog)
    return filelog


def _fail(code: int, message: str) -> int:
    print(f"cryptoseq: error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def load_config(path, seed=None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg = parse_config(text)
    return cfg if seed is None else cfg.replace(seed=seed)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    run = Run.open(cfg, args.out)
    handler = _setup_logging(run.dir)
    log.info("command %s, run directory %s", args.command, run.dir)
    try:
        STAGES[args.command](run)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except DivergenceError as exc:
        log.error("%s", exc)
        return _fail(EXIT_DIVERGED, exc)
    except _INPUT_ERRORS as exc:
        log.error("%s", exc)
        return _fail(EXIT_INPUT, exc)
    finally:
        handler.close()
        log.removeHandler(handler)
    log.info("done")
    print(run.dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
