"""Command line entry point: ``qdiscrim <command> [options]``.

Commands write delimited tables into ``--out`` together with a manifest
echo of the resolved configuration.  Exit status: 0 success, 1 failed
validation, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_experiment, dump_config, resolve_config
from .montecarlo import (
    UndefinedEstimateError,
    bench,
    estimate_qe_counting,
    estimate_qe_posterior,
    run_trial,
    trial_rng,
    _sample_truth,
    _true_model,
)
from .qmath import bloch_components
from .trajectory import IntegrationError, simulate_record

log = logging.getLogger("qdiscrim")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SCHEMA_VERSION = 1
UNITS_NOTE = "times in 1/gamma, frequencies in gamma"

COLUMNS = {
    "simulate": ["time", "x", "y", "z", "dY"],
    "discriminate": [
        "time", "x0", "y0", "z0", "x1", "y1", "z1",
        "loglik0", "loglik1", "log_ratio", "p0", "p1", "cond_error", "decision",
    ],
    "qe": ["time", "qe", "stderr", "n_trials", "estimator"],
    "bench": ["n_trials", "estimator", "first_passage_time", "wall_clock_seconds", "seed"],
}

COMMANDS = ("simulate", "discriminate", "qe", "bench", "validate")


@dataclass
class RunManifest:
    config_path: str | None
    config: dict
    command: str
    output_dir: Path
    overrides: list[str] = field(default_factory=list)
    options: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {
            "artifact_version": __version__,
            "command": self.command,
            "config_path": self.config_path,
            "overrides": self.overrides,
            "options": self.options,
            "seed": self.config["sim"]["seed"],
            "config": self.config,
        }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path: Path, kind: str, rows, comment: str = "") -> None:
    """CSV with a versioned comment line, a header and shortest round-trip floats."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# qdiscrim {kind} schema v{SCHEMA_VERSION}; {UNITS_NOTE}{'; ' + comment if comment else ''}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS[kind])
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> tuple[list[str], list[dict]]:
    """Parse a table written by :func:`write_table`; returns (comment lines, rows)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, list(csv.DictReader(body))


def _cmd_simulate(m: RunManifest, cfg) -> int:
    trial = m.options.get("trial", 0)
    rng = trial_rng(cfg.base_seed, trial)
    truth = _sample_truth(cfg, rng)
    path, record = simulate_record(_true_model(cfg, truth), cfg.rho0, cfg.grid, rng)
    bloch = bloch_components(path.states)
    times = cfg.grid.times
    dY = np.concatenate([[None], record.dY]) if record.n_steps else [None]
    rows = ((t, *b, y) for t, b, y in zip(times, bloch, dY))
    out = m.output_dir / "simulate.csv"
    write_table(out, "simulate", rows, f"truth={truth}; trial={trial}; dY[i] is the increment over (t[i-1], t[i]]")
    print(out)
    return EXIT_OK


def _cmd_discriminate(m: RunManifest, cfg) -> int:
    trial = m.options.get("trial", 0)
    r = run_trial(cfg, trial)
    b0 = bloch_components(r.states0)
    b1 = bloch_components(r.states1)
    post = r.posterior_path
    rows = (
        (r.times[i], *b0[i], *b1[i], r.loglik0[i], r.loglik1[i], r.loglik0[i] - r.loglik1[i],
         post.p0[i], post.p1[i], r.conditional_error_path[i], "H0" if r.accept_h0[i] else "H1")
        for i in range(len(r.times))
    )
    out = m.output_dir / "discriminate.csv"
    stop = "none" if r.stop_time is None else repr(r.stop_time)
    write_table(
        out, "discriminate", rows,
        f"truth={r.true_hypothesis}; trial={trial}; stop_time={stop}; repairs={r.repair_count}",
    )
    print(out)
    return EXIT_OK


def _cmd_qe(m: RunManifest, cfg) -> int:
    est = cfg.estimator
    if est == "posterior":
        curve = estimate_qe_posterior(cfg)
    else:
        curve, _ = estimate_qe_counting(cfg)
    rows = ((t, q, s, curve.n_trials, est) for t, q, s in zip(curve.times, curve.qe, curve.stderr))
    out = m.output_dir / f"qe_{est}.csv"
    write_table(out, "qe", rows)
    print(out)
    return EXIT_OK


def _cmd_bench(m: RunManifest, cfg) -> int:
    n_list = m.options.get("n_list") or [1, 10, 20, 50, 100]
    table = bench(cfg, n_list, repeats=m.options.get("repeats", 3), early_stop=not m.options.get("full_grid", False))
    rows = ((r.n_trials, r.estimator, r.first_passage_time, r.wall_clock_seconds, r.seed) for r in table)
    out = m.output_dir / "bench.csv"
    write_table(out, "bench", rows, f"beta={cfg.beta}; t_max={cfg.grid.t_max}; median of {m.options.get('repeats', 3)} runs")
    print(out)
    return EXIT_OK


def _cmd_validate(m: RunManifest, cfg) -> int:
    from .validation import run_checks

    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


HANDLERS = {
    "simulate": _cmd_simulate,
    "discriminate": _cmd_discriminate,
    "qe": _cmd_qe,
    "bench": _cmd_bench,
    "validate": _cmd_validate,
}


def dispatch(manifest: RunManifest) -> int:
    """Run one command; errors are reported on stderr and mapped to exit codes."""
    try:
        cfg = build_experiment(manifest.config)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest.command != "validate":
        manifest.output_dir.mkdir(parents=True, exist_ok=True)
        (manifest.output_dir / "manifest.json").write_text(json.dumps(manifest.echo(), indent=2) + "\n")
        (manifest.output_dir / "resolved_config.json").write_text(dump_config(manifest.config))
    try:
        return HANDLERS[manifest.command](manifest, cfg)
    except UndefinedEstimateError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("trial counts must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="JSON config file (defaults to the built-in example)")
    common.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. sim.dt=5e-4 (repeatable)")
    common.add_argument("-o", "--out", default="qdiscrim_out", help="output directory")
    common.add_argument("-w", "--workers", type=int, help="worker threads (beats QDISCRIM_WORKERS and the file)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qdiscrim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qdiscrim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "discriminate"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--trial", type=int, default=0, help="trial index within the seed's streams")
    sp = sub.add_parser("qe", parents=[common])
    sp.add_argument("--estimator", choices=["posterior", "counting"])
    sp.add_argument("-n", "--n", type=int, help="number of trials")
    sp = sub.add_parser("bench", parents=[common])
    sp.add_argument("--n-list", type=_int_list, help="comma-separated trial counts, default 1,10,20,50,100")
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--full-grid", action="store_true", help="integrate the whole grid instead of stopping at beta")
    sub.add_parser("validate", parents=[common])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        resolved = resolve_config(args.config, args.overrides, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    # flags that map onto config entries are folded in so the echoed config reproduces the run
    if getattr(args, "n", None) is not None:
        resolved["experiment"]["n_trials"] = args.n
    if getattr(args, "estimator", None) is not None:
        resolved["experiment"]["estimator"] = args.estimator
    options = {
        k: v for k, v in vars(args).items()
        if k not in {"config", "overrides", "out", "workers", "verbose", "command", "n", "estimator"}
    }
    manifest = RunManifest(args.config, resolved, args.command, Path(args.out), list(args.overrides), options)
    return dispatch(manifest)


if __name__ == "__main__":
    sys.exit(main())
