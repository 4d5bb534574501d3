"""Command-line front end: ``harnacklab check SUITE``, ``harnacklab list``,
``harnacklab oracle``.

Exit codes: 0 all checks pass, 1 any check fails, 2 configuration or output
error, 3 some check inconclusive and none failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .suites import SUITES, run_suite

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3

SUMMARY_FIELDS = ("check", "tag", "variant", "verdict", "trivial", "constant", "slack", "z",
                  "seed", "estimate", "mean", "stderr", "n")


class OutputError(OSError):
    """The output directory cannot be created or written."""


def build_describe() -> str:
    """``git describe`` of the source tree, or ``unknown`` outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def determinism_hash(report_dicts: list) -> str:
    blob = json.dumps(report_dicts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def aggregate_exit(verdicts) -> int:
    verdicts = list(verdicts)
    if "fail" in verdicts:
        return EXIT_FAIL
    if "inconclusive" in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_PASS


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _summary_rows(reports):
    for r in reports:
        d = r.to_dict()
        base = [d["check"], d["tag"], d["variant"] or "", d["verdict"], d["trivial"],
                d["constant"], d["slack"], d["z"], d["seed"]]
        for name, est in d["estimates"].items():
            if isinstance(est, dict):
                yield base + [name, est["mean"], est["stderr"], est["n"]]
            elif isinstance(est, (int, float)):
                yield base + [name, est, 0.0, 0]


def _csv_text(header, rows) -> str:
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def emit_report(reports: list, out_dir, cfg: ExperimentConfig | None = None,
                formats: str = "both", dump_paths: bool = False,
                wall_time: float | None = None) -> dict:
    """Write ``report.json``, ``summary.csv`` and optionally ``paths.csv``.

    Everything except ``wall_time`` is a function of the configuration and
    seed; ``determinism_hash`` covers the report list.
    """
    if not reports:
        raise ValueError("no checks were run; refusing to write an empty report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OutputError(f"output directory {out} is not writable")
    dicts = [r.to_dict() for r in reports]
    doc = {"reports": dicts,
           "config": cfg.to_dict() if cfg is not None else None,
           "seed": cfg.run.seed if cfg is not None else None,
           "build": build_describe(),
           "determinism_hash": determinism_hash(dicts),
           "wall_time": {"total": wall_time,
                         "per_check": [round(r.runtime, 6) for r in reports]}}
    try:
        if formats in ("json", "both"):
            _atomic_write(out / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
        if formats in ("csv", "both"):
            _atomic_write(out / "summary.csv", _csv_text(SUMMARY_FIELDS, _summary_rows(reports)))
        if dump_paths:
            rows, width = [], 0
            for i, r in enumerate(reports):
                if r.paths is None:
                    continue
                for row in r.paths.csv_rows(0):
                    rows.append([i, r.check, *row])
                    width = max(width, len(row) - 1)
            header = ["report", "check", "time"] + [f"x{k + 1}" for k in range(width)]
            _atomic_write(out / "paths.csv", _csv_text(header, rows))
    except OSError as exc:
        raise OutputError(f"cannot write to {out}: {exc}") from exc
    return doc


def oracle_values() -> dict:
    """Closed-form reference values used by the suites."""
    from .control import lemma3_control, min_energy_norm_sq
    from .spectral import SpectralOperator

    A1 = SpectralOperator(np.array([1.0]))
    return {
        "min_energy_single_mode": min_energy_norm_sq(A1, None, 1.0, [1.0]),
        "min_energy_single_mode_closed_form": 2.0 / (1.0 - np.exp(-2.0)),
        "lemma3_norm_single_mode": lemma3_control(A1, None, 1.0, [1.0]).norm_sq(),
        "lemma3_bound_single_mode": 4.0,
        "regularity_integral_single_mode": 1 - 2 * (1 - np.exp(-1)) + (1 - np.exp(-2)) / 2,
    }


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harnacklab",
                                     description="Monte Carlo checks of Harnack-type "
                                                 "inequalities and integration-by-parts formulas")
    sub = parser.add_subparsers(dest="command", required=True)
    check = sub.add_parser("check", help="run a check suite")
    check.add_argument("suite", choices=SUITES + ("all",))
    check.add_argument("--config", type=Path)
    check.add_argument("--seed", type=int)
    check.add_argument("--samples", type=int, help="paths per Monte Carlo check")
    check.add_argument("--step", type=float)
    check.add_argument("--out", type=Path)
    check.add_argument("--jobs", type=int, default=1)
    check.add_argument("--dump-paths", action="store_true")
    check.add_argument("--format", choices=("json", "csv", "both"))
    check.add_argument("--p", type=float, nargs="+", help="Harnack exponents (each > 1)")
    sub.add_parser("list", help="list the check suites")
    sub.add_parser("oracle", help="print closed-form reference values")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.samples is not None:
        run = replace(run, n_paths=args.samples)
    if args.step is not None:
        run = replace(run, step=args.step)
    if args.p is not None:
        run = replace(run, p=list(args.p))
    output = cfg.output
    if args.out is not None:
        output = replace(output, directory=str(args.out))
    if args.format is not None:
        output = replace(output, formats=args.format)
    if args.dump_paths:
        output = replace(output, dump_paths=True)
    cfg = replace(cfg, run=run, output=output)
    cfg.validate()
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    return cfg


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "list":
        for name in SUITES + ("all",):
            print(name)
        return EXIT_PASS
    if args.command == "oracle":
        print(json.dumps(oracle_values(), indent=2))
        return EXIT_PASS
    try:
        cfg = load_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        reports = run_suite(args.suite, cfg, args.jobs)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    wall = time.perf_counter() - t0
    try:
        emit_report(reports, cfg.output.directory, cfg, cfg.output.formats,
                    cfg.output.dump_paths, wall)
    except (OutputError, ValueError) as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in reports:
        mark = "" if r.verdict == "pass" else "  <--"
        print(f"{r.verdict:12s} {r.check:26s} {r.variant or '':12s} slack={r.slack}{mark}")
    code = aggregate_exit(r.verdict for r in reports)
    if code == EXIT_FAIL:
        failed = ", ".join(f"{r.check}[{r.variant or r.details.get('kind', '')}]"
                           for r in reports if r.verdict == "fail")
        print(f"failed: {failed}", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
