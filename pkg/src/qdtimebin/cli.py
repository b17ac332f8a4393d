"""Command-line front end: ``qdtimebin {simulate,g2,tomo,reproduce}``.

Exit codes: 0 success, 1 bad configuration or channel name, 2 I/O failure,
3 empty channel in a correlation, 4 tomography fits failing to converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, replace
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, default_config, load_config
from .correlate import EmptyChannelError, G2UndefinedError, build_histogram, g2_zero
from .detection import CHANNEL_NAMES, TagFileError, _atomic_write_text, read_tags_csv, write_tags_csv
from .qmath import bell_state, fidelity
from .source import InvalidParameter, simulate_emissions
from .tomography import BootstrapError, write_counts_csv

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_EMPTY, EXIT_MLE = 0, 1, 2, 3, 4
MODE_ALIASES = {"pol": "polarization", "polarization": "polarization", "timebin": "timebin", "tb": "timebin"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    run = {}
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "pulses", None) is not None:
        run["pulses"] = args.pulses
    if run:
        try:
            cfg = cfg.with_overrides(run=run)
        except InvalidParameter as exc:
            raise ConfigError(f"run.{exc.field}", str(exc)) from None
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _mode(cfg: RunConfig, name: str | None) -> str:
    if name is None:
        return cfg.tomography.mode
    return MODE_ALIASES[name]


# -- simulate -----------------------------------------------------------------

def simulate_tags(cfg: RunConfig, mode: str = "polarization"):
    """Detector tags (with trigger channel) of one run in the given mode."""
    em = simulate_emissions(cfg.source, cfg.n_pulses, cfg.seed)
    if mode == "timebin":
        plan = replace(cfg.tomography, mode="timebin")
        return pipeline.timebin_run(em, cfg.source, cfg.interface, cfg.detector, plan, cfg.seed).tags
    return pipeline.detect_emissions(em, cfg.detector, cfg.seed, triggers=True)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    mode = _mode(cfg, args.mode)
    tags = simulate_tags(cfg, mode)
    out = _out(args, cfg.output.tags)
    write_tags_csv(out, tags)
    print(f"pulses={cfg.n_pulses}")
    for name, ch in CHANNEL_NAMES.items():
        print(f"tags_{name}={tags.count(ch)}")
    print(f"output={out}")
    return EXIT_OK


# -- g2 -------------------------------------------------------------------------

def _channel(name: str) -> int:
    key = name.upper()
    if key not in CHANNEL_NAMES:
        raise CliError(EXIT_CONFIG, f"unknown channel name {name!r}; expected one of {sorted(CHANNEL_NAMES)}")
    return CHANNEL_NAMES[key]


def cmd_g2(args) -> int:
    cfg = _load(args)
    start, stop = _channel(args.start), _channel(args.stop)
    tags = read_tags_csv(args.tags)
    for ch, name in ((start, args.start), (stop, args.stop)):
        if tags.count(ch) == 0:
            raise CliError(EXIT_EMPTY, f"channel {name} has no tags")
    hist = build_histogram(tags, start, stop, args.bin_width * 1e-12, args.range * 1e-9,
                           rep_period=cfg.source.rep_period)
    try:
        result = g2_zero(hist)
    except G2UndefinedError as exc:
        raise CliError(EXIT_EMPTY, str(exc)) from None
    out = _out(args, cfg.output.histogram)
    hist.write_csv(out)
    sys.stdout.write(result.to_text())
    return EXIT_OK


# -- tomo -----------------------------------------------------------------------

def cmd_tomo(args) -> int:
    cfg = _load(args)
    mode = _mode(cfg, args.mode)
    plan = replace(cfg.tomography, mode=mode)
    em = simulate_emissions(cfg.source, cfg.n_pulses, cfg.seed)
    try:
        run = pipeline.run_tomography(em, cfg.source, cfg.interface, cfg.detector, plan, cfg.seed,
                                      noiseless=args.noiseless, bootstrap=not args.no_bootstrap)
    except BootstrapError as exc:
        raise CliError(EXIT_MLE, str(exc)) from None
    if not run.result.converged:
        raise CliError(EXIT_MLE, "maximum-likelihood fit did not converge")
    report = _out(args, cfg.output.report)
    counts_path = report.with_name(report.stem + "_counts.csv")
    write_counts_csv(counts_path, run.counts)
    _atomic_write_text(report, run.result.report())
    r = run.result
    print(f"mode={mode}")
    print(f"coincidences={sum(c.coincidences for c in run.counts)}")
    print(f"concurrence={r.concurrence:.4f} +- {r.sigma_c:.4f}")
    print(f"fidelity_best={r.fidelity_best:.4f} +- {r.sigma_f:.4f}")
    print(f"best_phase_pi={r.best_phase / math.pi:.4f}")
    print(f"report={report}")
    print(f"counts={counts_path}")
    return EXIT_OK


# -- reproduce ------------------------------------------------------------------

@dataclass(frozen=True)
class PaperValue:
    name: str
    value: float
    error: float
    tolerance: float
    citation: str


def paper_values() -> dict[str, PaperValue]:
    text = files("qdtimebin").joinpath("data/paper_values.csv").read_text(encoding="utf-8")
    rows = csv.DictReader(io.StringIO(text))
    return {
        r["name"]: PaperValue(r["name"], float(r["paper_value"]), float(r["paper_error"]),
                              float(r["tolerance"]), r["citation"])
        for r in rows
    }


def reproduce_values(cfg: RunConfig, g2_pulses: int = 1_000_000, sweep_pulses: int = 2_000_000) -> dict[str, float]:
    """Simulated counterpart of every entry of the reference table.

    g2(0) entries are central-peak maxima, the statistic the reference
    values quote.
    """
    seed = cfg.seed
    sim: dict[str, float] = {}
    for label, fwhm in (("100ps", 100e-12), ("3ps", 3e-12)):
        suite = pipeline.g2_suite(replace(cfg.source, pulse_fwhm=fwhm), cfg.detector, g2_pulses, seed)
        for kind, res in suite.items():
            sim[f"g2_{kind}_{label}"] = res.g2_zero_peak_max

    em = simulate_emissions(cfg.source, cfg.n_pulses, seed)
    for mode, tag in (("polarization", "pol"), ("timebin", "tb")):
        plan = replace(cfg.tomography, mode=mode)
        run = pipeline.run_tomography(em, cfg.source, cfg.interface, cfg.detector, plan, seed, bootstrap=False)
        r = run.result
        sim[f"c_{tag}"] = r.concurrence
        sim[f"f_{tag}"] = r.fidelity_best
        sim[f"phase_{tag}_pi"] = abs(r.best_phase) / math.pi
        if mode == "polarization":
            sim["f_pol_bell0"] = fidelity(r.rho, bell_state(0.0))

    tags = pipeline.detect_emissions(em, cfg.detector, seed, triggers=True)
    fit = pipeline.fit_lifetimes(tags, cfg.detector.jitter_fwhm)
    sim["tau_xx_ns"] = fit.tau_xx * 1e9
    sim["tau_x_ns"] = fit.tau_x * 1e9

    sweep = pipeline.power_sweep(cfg.source, n_pulses=sweep_pulses, seed=seed)
    sim["exponent_xx"] = sweep.exponent_xx
    sim["exponent_x"] = sweep.exponent_x

    tb = pipeline.timebin_run(em, cfg.source, cfg.interface, cfg.detector,
                              replace(cfg.tomography, mode="timebin"), seed)
    sim["peak_spacing_ns"] = pipeline.three_peak_analysis(tb).spacing * 1e9
    return sim


def reproduce_table(sim: dict[str, float], reference: dict[str, PaperValue]) -> str:
    buf = io.StringIO()
    buf.write("name,simulated,paper,error,within\n")
    for name, ref in reference.items():
        value = sim.get(name, float("nan"))
        within = bool(np.isfinite(value) and abs(value - ref.value) <= ref.tolerance + 1e-12)
        buf.write(f"{name},{value:.4g},{ref.value:.4g},{ref.error:.4g},{str(within).lower()}\n")
    return buf.getvalue()


def cmd_reproduce(args) -> int:
    cfg = _load(args)
    sim = reproduce_values(cfg)
    table = reproduce_table(sim, paper_values())
    out = _out(args, cfg.output.table)
    _atomic_write_text(out, table)
    sys.stdout.write(table)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (default: shipped calibrated defaults)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="output file")
    common.add_argument("--pulses", type=int, help="override run.pulses")

    parser = argparse.ArgumentParser(prog="qdtimebin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate detector time tags")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), help="polarization tags or tags behind the interface")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("g2", parents=[common], help="correlation histogram and g2(0) of a tag file")
    p.add_argument("tags", help="time-tag CSV")
    p.add_argument("--start", default="XX", help="start channel name (XX, X, TRIGGER)")
    p.add_argument("--stop", default="X", help="stop channel name")
    p.add_argument("--bin-width", type=float, default=128.0, help="bin width in ps")
    p.add_argument("--range", type=float, default=100.0, help="histogram half range in ns")
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("tomo", parents=[common], help="simulated tomography and state reconstruction")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), help="polarization or time-bin tomography")
    p.add_argument("--noiseless", action="store_true", help="use expected counts instead of Poisson draws")
    p.add_argument("--no-bootstrap", action="store_true", help="skip bootstrap error bars")
    p.set_defaults(func=cmd_tomo)

    p = sub.add_parser("reproduce", parents=[common], help="table of simulated versus reference values")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, InvalidParameter) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyChannelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (OSError, TagFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
