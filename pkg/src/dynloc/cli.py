"""Command-line front end.

    dynloc SUBCOMMAND [--config PATH] [--workers N] [--seed U64] [--out DIR]

Writes CSV/JSON (and PNG figures when ``formats`` includes ``png``) into the
output directory, each file atomically, then ``manifest.json`` with SHA-256
hashes of every data file.  One ``verdict`` line per check goes to stdout;
failed checks are repeated on stderr and make the exit status 1.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .artifacts import atomic_write, csv_text, json_text, write_manifest
from .config import ConfigError, load_config
from .experiments import EXPERIMENTS, Outcome
from .lattice import GeometryError

SUBCOMMANDS = ("dynamics", "exponents", "msa", "wegner", "green-checks", "certify", "all")
ECHO = "resolved_config.ini"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynloc", description="Dynamical localization experiments on lattice models.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, default=None, help="run configuration file")
    ap.add_argument("--workers", type=int, default=None, help="worker processes (overrides the config)")
    ap.add_argument("--seed", type=int, default=None, help="master seed, 64-bit (overrides the config)")
    ap.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    return ap


def emit(outcome: Outcome, out_dir: Path, formats: tuple) -> list[str]:
    written = []
    if "csv" in formats:
        for name, (header, rows) in outcome.tables.items():
            atomic_write(out_dir / name, csv_text(header, rows))
            written.append(name)
    if "json" in formats:
        for name, doc in outcome.documents.items():
            atomic_write(out_dir / name, json_text(doc))
            written.append(name)
    if "png" in formats and outcome.figures:
        from .plotting import PLOTS

        for name, (kind, data) in outcome.figures.items():
            atomic_write(out_dir / name, PLOTS[kind](data))
            written.append(name)
    return written


def run(subcommand: str, config: Path | None = None, workers: int | None = None, seed: int | None = None,
        out: Path | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        cfg = load_config(config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=stderr)
        return 2
    if seed is not None:
        if not 0 <= seed < 2**64:
            print("config error: --seed must fit in 64 bits", file=stderr)
            return 2
        cfg["execution"]["seed"] = seed
    if workers is not None:
        cfg["execution"]["workers"] = workers
    if out is not None:
        cfg["output"]["directory"] = str(out)
    out_dir = Path(cfg["output"]["directory"])
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(out_dir / ECHO, cfg.echo())

    names = list(EXPERIMENTS) if subcommand == "all" else [subcommand]
    cache: dict = {}
    written, verdicts = [], []
    for name in names:
        try:
            outcome = EXPERIMENTS[name](cfg, cfg["execution"]["workers"], cache)
        except (GeometryError, ValueError, RuntimeError) as exc:
            print(f"{name}: {type(exc).__name__}: {exc}", file=stderr)
            return 2
        written += emit(outcome, out_dir, cfg["output"]["formats"])
        verdicts += outcome.verdicts
    write_manifest(out_dir, written)

    informational = set(cfg["execution"]["informational"])
    failed = []
    for v in verdicts:
        tag = "PASS" if v.passed else "FAIL"
        note = " (informational)" if v.name in informational else ""
        print(f"verdict,{v.name},{tag},{v.detail}{note}", file=stdout)
        if not v.passed and v.name not in informational:
            failed.append(v)
    for v in failed:
        print(f"FAILED {v.name}: {v.detail}", file=stderr)
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.workers, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
