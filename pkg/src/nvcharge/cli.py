"""Command-line entry point.

    nvcharge --scenario fig1c --seed 42 --out runs/fig1c
    nvcharge --scenario custom --protocol my.proto --solver ode --out runs/x
    nvcharge --validate-config my.ini
    nvcharge --dump-config > defaults.ini

Exit codes: 0 success, 2 invalid configuration or arguments, 1 run failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, default_config_text, load_config, validate_config
from .protocol import ProtocolSyntaxError
from .scenarios import SCENARIOS, ScenarioError, run_scenario

__all__ = ["main", "build_parser"]

log = logging.getLogger("nvcharge")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvcharge", description="NV charge-state dynamics simulator")
    p.add_argument("--scenario", choices=SCENARIOS, help="named scenario to run")
    p.add_argument("--config", type=Path, help="configuration file (INI with units)")
    p.add_argument("--protocol", help="builtin protocol name or protocol file (custom scenario)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--solver", choices=("kmc", "ode"), help="stochastic or master-equation solver")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--validate-config", type=Path, metavar="PATH", help="lint a config file and exit")
    p.add_argument("--dump-config", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _validate(path: Path) -> int:
    try:
        diags = validate_config(path)
    except OSError as e:
        print(f"error: cannot read {path}: {e.strerror or e}", file=sys.stderr)
        return 2
    for d in diags:
        print(d)
    n_err = sum(d.severity == "error" for d in diags)
    n_warn = sum(d.severity == "warning" for d in diags)
    n_cal = sum(d.severity == "notice" for d in diags)
    print(f"{n_err} error(s), {n_warn} warning(s), {n_cal} calibration notice(s)")
    return 2 if n_err else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.dump_config:
        sys.stdout.write(default_config_text())
        return 0
    if args.validate_config is not None:
        return _validate(args.validate_config)
    if args.scenario is None:
        print("error: --scenario is required (or use --validate-config / --dump-config)", file=sys.stderr)
        return 2

    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        for d in e.diagnostics:
            if d.severity != "notice":
                print(d, file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: cannot read {args.config}: {e.strerror or e}", file=sys.stderr)
        return 2
    for section, key, value in (("run", "seed", args.seed), ("run", "solver", args.solver),
                                ("run", "workers", args.workers), ("run", "protocol", args.protocol)):
        if value is not None:
            cfg.set(section, key, value)
    if cfg.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    if args.out is not None:
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            print(f"error: cannot create {args.out}: {e.strerror or e}", file=sys.stderr)
            return 2
        if not os.access(args.out, os.W_OK):
            print(f"error: output directory {args.out} is not writable", file=sys.stderr)
            return 2

    t0 = time.perf_counter()
    try:
        res = run_scenario(args.scenario, cfg, args.out)
    except ProtocolSyntaxError as e:
        print(f"error: protocol: {e}", file=sys.stderr)
        return 2
    except (ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    log.info("finished in %.1f s", time.perf_counter() - t0)
    print(json.dumps({"scenario": res.name, "headline": res.headline}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
