"""Command-line entry point: ``snlink {simulate,train,run,sweep,compare}``.

Every subcommand takes ``--config FILE`` (YAML) plus any number of
``--set key=value`` overrides (dotted keys reach nested sections, e.g.
``--set scenario.n_subnets=4``).  Output files carry a tag built from the
hash of the full effective configuration and the seed, and the effective
configuration itself is written next to them.

Exit codes: 0 success, 2 usage, 3 validation, 4 numerical failure, 5 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import build_config, run_tag, write_effective_config
from .errors import ConfigurationError, ContractViolation, NumericalError, SnlinkError
from .feedback import CqiReport, CqiTable, write_cqi_csv
from .harness import (Calibration, ExperimentConfig, PhaseError, Prepared, ResultTable, _clamp_ipv, _cqi,
                      prepare, run_online, train, write_results)
from .scenario import init_scenario, iterate, write_trace_csv

log = logging.getLogger("snlink")

OUT_DIR_ENV = "SNLINK_OUT_DIR"
SWEEP_AXES = ("d", "N", "duty", "q")
DEFAULT_SWEEP_VALUES = {"d": "2,4,8,10", "N": "5,10,20", "duty": "0.5,0.7,0.9", "q": "0.01,0.05,0.2"}
SUMMARY_METRICS = ("mean_se", "bler_p90", "none_fraction")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    """Bad command-line usage detected after argument parsing."""


# ---------------------------------------------------------------------------
# trace I/O


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cube(rows, key, cast, n_cycles, n_sn, n_sa, first):
    out = np.empty((n_cycles, n_sn, n_sa), dtype=cast)
    for r in rows:
        out[int(r["cycle"]) - first, int(r["sn"]), int(r["sa"])] = cast(float(r[key]))
    return out


def calibration_from_csv(cfg: ExperimentConfig, trace_path, cqi_path) -> Calibration:
    """Rebuild a calibration record from the CSV pair written by ``simulate``.

    The first ``n_train`` cycles are used.  The trace must cover every
    (SN, SA) pair of the configured scenario.
    """
    rows = _read_rows(trace_path)
    cqi_rows = _read_rows(cqi_path)
    if not rows:
        raise ConfigurationError(f"{trace_path}: empty trace")
    sc = cfg.scenario
    cycles = sorted({int(r["cycle"]) for r in rows})
    n_sn = 1 + max(int(r["sn"]) for r in rows)
    n_sa = 1 + max(int(r["sa"]) for r in rows)
    if (n_sn, n_sa) != (sc.n_subnets, sc.n_sas):
        raise ConfigurationError(f"{trace_path}: trace has N={n_sn}, M={n_sa} but the configuration "
                                 f"has N={sc.n_subnets}, M={sc.n_sas}")
    first, T = cycles[0], len(cycles)
    if cycles != list(range(first, first + T)) or len(rows) != T * n_sn * n_sa:
        raise ConfigurationError(f"{trace_path}: trace is not a complete cycle x SN x SA grid")
    if len(cqi_rows) != len(rows):
        raise ConfigurationError(f"{cqi_path}: {len(cqi_rows)} CQI rows for {len(rows)} trace rows")
    if T < cfg.n_train:
        raise ConfigurationError(f"{trace_path}: {T} cycles, configuration needs n_train={cfg.n_train}")
    ipv = _cube(rows, "ipv_dbm", float, T, n_sn, n_sa, first)[:cfg.n_train]
    sinr = _cube(rows, "sinr_db", float, T, n_sn, n_sa, first)[:cfg.n_train]
    cqi = _cube(cqi_rows, "cqi", int, T, n_sn, n_sa, first)[:cfg.n_train]
    # own-link signal is static; recover it from SINR and IPV
    n_lin = 10.0 ** (sc.noise_power_dbm / 10.0)
    sig = np.median(sinr + 10.0 * np.log10(10.0 ** (ipv / 10.0) + n_lin), axis=0)
    return Calibration(_clamp_ipv(cfg, ipv), sinr, cqi, None, None, sig)


def _cqi_path_for(trace_path: Path) -> Path:
    name = trace_path.name
    if not name.startswith("trace_"):
        raise UsageError(f"cannot infer the CQI file for {trace_path}; pass --cqi")
    return trace_path.with_name("cqi_" + name[len("trace_"):])


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    """Ground-truth IPV/SINR trace plus the CQI stream it generates."""
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = run_tag(cfg)
    table = CqiTable()
    rng = np.random.default_rng([cfg.seed, 1])
    state = init_scenario(replace(cfg.scenario, seed=cfg.seed))
    truths, reports = [], []
    for _, gt in iterate(state, cfg.horizon_cycles):
        truths.append(gt)
        idx = _cqi(gt.sinr_db, rng, cfg, table)
        reports.extend(CqiReport(n, tuple(int(v) for v in idx[n]), gt.cycle) for n in range(idx.shape[0]))
    trace_path = out / f"trace_{tag}.csv"
    cqi_path = out / f"cqi_{tag}.csv"
    n = write_trace_csv(trace_path, truths)
    write_cqi_csv(cqi_path, reports)
    write_effective_config(cfg, out)
    print(f"wrote {n} rows to {trace_path} and {cqi_path}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    trace = Path(args.trace)
    cqi = Path(args.cqi) if args.cqi else _cqi_path_for(trace)
    cal = calibration_from_csv(cfg, trace, cqi)
    try:
        models = train(cfg, cal)
    except SnlinkError as exc:
        raise PhaseError("training", exc) from exc
    tag = run_tag(cfg)
    out = Path(args.out_dir) / f"models_{tag}"
    out.mkdir(parents=True, exist_ok=True)
    elbo_path = Path(args.out_dir) / f"elbo_{tag}.csv"
    with open(elbo_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sn", "sa", "model", "epoch", "elbo"])
        for sn, (mf, mg) in sorted(models.items()):
            for sa, (f, g) in enumerate(zip(mf, mg)):
                for kind, model in (("F", f), ("G", g)):
                    model.save(out / f"sn{sn}_sa{sa}_{kind}.json")
                    for epoch, val in enumerate(model.sptpr.elbo_trace, start=1):
                        w.writerow([sn, sa, kind, epoch, repr(float(val))])
    write_effective_config(cfg, args.out_dir)
    print(f"wrote {2 * sum(len(mf) for mf, _ in models.values())} models to {out} and ELBO curves to {elbo_path}")
    return EXIT_OK


def _run_and_write(cfg: ExperimentConfig, prep: Prepared | None, out_dir, traces: bool) -> tuple[ResultTable, dict]:
    prep = prepare(cfg) if prep is None else prep
    result = run_online(cfg, prep)
    tag = run_tag(cfg)
    if traces:
        paths = write_results(result, out_dir, tag)
    else:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        js = out / f"results_{tag}.json"
        with open(js, "w") as fh:
            json.dump(result.summary(), fh, indent=2, sort_keys=True)
        paths = {"json": str(js)}
    write_effective_config(cfg, out_dir)
    return result, paths


def cmd_run(cfg: ExperimentConfig, args) -> int:
    result, paths = _run_and_write(cfg, None, args.out_dir, traces=True)
    print(format_table(summary_rows(result.summary())))
    print(f"results: {paths['json']}")
    return EXIT_OK


def _sweep_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "d":
        return replace(cfg, delay=int(value))
    if axis == "q":
        return replace(cfg, q=float(value))
    if axis == "N":
        return replace(cfg, scenario=replace(cfg.scenario, n_subnets=int(value)))
    return replace(cfg, scenario=replace(cfg.scenario, duty_probability=float(value)))


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if args.axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {args.axis!r}; valid axes: {', '.join(SWEEP_AXES)}")
    raw = args.values if args.values is not None else DEFAULT_SWEEP_VALUES[args.axis]
    try:
        values = [float(v) if args.axis in ("duty", "q") else int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values for axis {args.axis} must be a comma-separated list of numbers") from None
    if not values:
        raise UsageError("--values is empty")
    configs = [_sweep_config(cfg, args.axis, v).validate() for v in values]
    # d and q act only on the online phase, so calibration and training are shared
    shared = prepare(configs[0]) if args.axis in ("d", "q") else None
    rows = []
    for v, c in zip(values, configs):
        log.info("sweep %s=%s", args.axis, v)
        result, paths = _run_and_write(c, shared, args.out_dir, traces=False)
        for r in summary_rows(result.summary()):
            rows.append({"axis": args.axis, "value": v, "tag": run_tag(c), **r})
        print(f"{args.axis}={v}: {paths['json']}")
    merged = Path(args.out_dir) / f"sweep_{args.axis}_{run_tag(cfg)}.csv"
    with open(merged, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["axis", "value", "tag", "method", *SUMMARY_METRICS])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(x) if isinstance(x, float) else x) for k, x in r.items()})
    print(f"merged: {merged}")
    return EXIT_OK


def summary_rows(summary: dict) -> list[dict]:
    """One row per method with the headline metrics, values taken verbatim from ``summary``."""
    return [{"method": m, **{k: s[k] for k in SUMMARY_METRICS}} for m, s in summary["methods"].items()]


def format_table(rows: list[dict]) -> str:
    """Fixed-width text table; floats are printed with ``repr`` so they round-trip exactly."""
    cols = ["method", *SUMMARY_METRICS]
    cells = [cols] + [[r[c] if isinstance(r[c], str) else repr(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells)


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    if args.results:
        with open(args.results) as fh:
            summary = json.load(fh)
        tag = Path(args.results).stem.removeprefix("results_")
    else:
        result, _ = _run_and_write(cfg, None, args.out_dir, traces=False)
        summary = result.summary()
        tag = run_tag(cfg)
    rows = summary_rows(summary)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"compare_{tag}.json"
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=2)
    print(format_table(rows))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "run": cmd_run, "sweep": cmd_sweep,
            "compare": cmd_compare}


# ---------------------------------------------------------------------------
# parser and dispatch


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable, dotted keys for sections)")
    common.add_argument("--out-dir", default=os.environ.get(OUT_DIR_ENV, "out"),
                        help=f"output directory (default: ${OUT_DIR_ENV} or ./out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="snlink", description="Interference-aware link adaptation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write ground-truth IPV and CQI traces")
    p = sub.add_parser("train", parents=[common], help="fit dynamics and measurement models from a trace")
    p.add_argument("--trace", required=True, help="trace CSV written by simulate")
    p.add_argument("--cqi", help="CQI CSV (default: sibling cqi_<tag>.csv of the trace)")
    sub.add_parser("run", parents=[common], help="run one experiment")
    p = sub.add_parser("sweep", parents=[common], help="run one experiment per value of an axis")
    p.add_argument("--axis", required=True, help=f"one of: {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", help="comma-separated values (default depends on the axis)")
    p = sub.add_parser("compare", parents=[common], help="print a method-vs-metric table")
    p.add_argument("--results", help="render an existing results JSON instead of running")
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PhaseError):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigurationError, ContractViolation)):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_NUMERICAL if isinstance(exc, SnlinkError) else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = build_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"snlink {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SnlinkError, OSError) as exc:
        print(f"snlink {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
