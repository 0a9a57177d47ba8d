"""Command line interface: ``mflab run <config>``, ``mflab selftest``,
``mflab print-schema``.

Exit codes: 0 success, 1 error (including config validation failures,
reported with the offending key path), 2 acceptance-threshold violation in
selftest.
"""

from __future__ import annotations

import argparse
import sys
import time
import traceback

from .config import ConfigError, load_config, parse_config_dict, schema_text
from .experiments import run_experiment
from .report import ResultWriter, write_manifest

__all__ = ["main"]


def _execute(cfg) -> int:
    t0 = time.time()
    outdir = cfg.output_dir()
    master_seed = cfg["plan"]["master_seed"]
    writer = ResultWriter(master_seed, cfg.config_hash)
    log: list[str] = []
    violations = run_experiment(cfg, writer, log, _ensure_dir(outdir))
    outputs = writer.write(outdir)
    status = 2 if violations else 0
    manifest = write_manifest(outdir, cfg.config_hash, master_seed,
                              cfg["experiment"]["kind"], time.time() - t0,
                              outputs, log, exit_status=status)
    for line in log:
        print(line)
    print(f"wrote {', '.join(outputs + [manifest])}")
    if violations:
        print(f"selftest violations: {', '.join(violations)}", file=sys.stderr)
    return status


def _ensure_dir(path: str) -> str:
    import os

    os.makedirs(path, exist_ok=True)
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mflab",
        description="Mean-field particle laboratory: simulate, extract cumulants, "
                    "and measure convergence rates.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a TOML config")
    p_run.add_argument("config", help="path to the config file")
    sub.add_parser("selftest", help="run the built-in fast verification battery")
    sub.add_parser("print-schema", help="print the documented config schema")
    args = parser.parse_args(argv)

    if args.command == "print-schema":
        print(schema_text())
        return 0
    try:
        if args.command == "selftest":
            cfg = parse_config_dict({"experiment": {"kind": "selftest"},
                                     "output": {"dir": "selftest_out"}})
        else:
            cfg = load_config(args.config)
        return _execute(cfg)
    except ConfigError as exc:
        print(f"config error at {exc.key}: {exc.args[0][len(exc.key) + 2:]}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
