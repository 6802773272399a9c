"""Command-line entry point (``mbmimo``)."""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .channel import ConfigError
from .experiments import COMMANDS, thread_count
from .scenario import Scenario, load_config
from .numerics import NumericalDomainError

MANIFEST = "manifest.json"


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "scikit-learn", "pydantic"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(v.item())
    return str(v)


def write_table(path, table):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_cell(v) for v in row])


def write_manifest(out_dir, command, scenario, outputs, extra):
    manifest = {
        "command": command,
        "seed": scenario.seed,
        "config": scenario.config.model_dump(mode="json"),
        "options": extra,
        "versions": _versions(),
        "outputs": sorted(outputs),
    }
    with open(out_dir / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute(command, scenario, out_dir, **options):
    """Run ``command`` and write the manifest followed by its CSV files."""
    if command not in COMMANDS:
        raise ConfigError(f"command: unknown command {command!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = COMMANDS[command](scenario, **options)
    write_manifest(out_dir, command, scenario, tables, options)
    for name, table in tables.items():
        write_table(out_dir / name, table)
    return {name: out_dir / name for name in tables}


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario JSON file")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--seed", type=int, help="override seeds.master")
    common.add_argument("--threads", type=int,
                        help="worker threads (default: $MBMIMO_THREADS or 1)")
    p = argparse.ArgumentParser(prog="mbmimo",
                                description="Multi-band coupled-array MIMO simulator")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run the command named in the config")
    run.add_argument("config_path", type=Path)
    for name in ("sweep-spacing", "sweep-subcarriers", "sweep-snr", "sweep-beta", "bode",
                 "compare-modes"):
        sub.add_parser(name, parents=[common])
    opt = sub.add_parser("optimize", parents=[common])
    opt.add_argument("--mode", choices=("offline", "online"))
    opt.add_argument("--realization", type=int, help="realization index for online mode")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    config_path = getattr(args, "config_path", None) or args.config
    if config_path is None:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        cfg = load_config(config_path)
        scenario = Scenario(cfg)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed: must be an unsigned 64-bit integer")
            scenario = scenario.replace(**{"seeds.master": args.seed})
        command = args.command
        if command == "run":
            command = cfg.command
            if command is None:
                raise ConfigError("command: field required for 'run'")
        options = {"threads": thread_count(args.threads)}
        if command == "optimize":
            mode = getattr(args, "mode", None) or cfg.mode
            realization = getattr(args, "realization", None)
            options.update(mode=mode, realization=cfg.realization if realization is None
                           else realization)
        written = execute(command, scenario, args.out, **options)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ConfigError, NumericalDomainError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    for path in written.values():
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
