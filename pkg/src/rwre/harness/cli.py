"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration, 2 verdict failure under
``--strict``, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..conditions.effective import RhoError
from ..conditions.goodness import GoodnessBudgetError
from ..conditions.schedule import ScheduleError
from ..environment import LawError
from ..geometry import GeometryError
from ..solver import SolverError
from .config import SUBCOMMANDS, ConfigError, build_config, load_config
from .experiments import run
from .records import export

EXIT_OK, EXIT_CONFIG, EXIT_VERDICT, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("rwre")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment description")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--trials", type=int)
    common.add_argument("--env-trials", type=int, dest="env_trials")
    common.add_argument("--threads", type=int)
    common.add_argument("--step-cap", type=int, dest="step_cap")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--format", choices=("csv", "jsonl"))
    common.add_argument("--strict", action="store_true", default=None,
                        help="exit with status 2 when the experiment's verdict fails")
    p = argparse.ArgumentParser(prog="rwre", description="Random walks in random environment: experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = build_config(args.command, load_config(args.config), overrides)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        records, ok = run(cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (LawError, GeometryError, ScheduleError, ValueError, KeyError, TypeError) as exc:
        log.error("invalid experiment: %s", exc)
        return EXIT_CONFIG
    except (SolverError, RhoError, GoodnessBudgetError, ArithmeticError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    export(records, cfg.get("out"), cfg.get("format"), sys.stdout)
    if cfg.get("strict") and not ok:
        log.error("verdict failed")
        return EXIT_VERDICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
