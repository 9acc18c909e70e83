"""Command-line front end for the time-bin QKD link simulator.

The five verbs map onto the harness entry points:

``run``               one scenario end to end, artifacts plus a summary
``sweep-dispersion``  pulse broadening against fiber length for the stock lasers
``stability``         hourly sampling of a drifting link, feedback loop on/off
``table``             several scenarios collated into one summary table
``selftest``          fast smoke check on an ideal bench link

Exit codes: 0 success, 2 no key where one was expected, 3 transport
failure, 4 bad configuration or command line.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, TransportError
from .harness import run_scenario, stability_run, sweep_dispersion, table_report
from .scenario import available_presets, builtin_scenario, load_scenario

EXIT_OK = 0
EXIT_NO_KEY = 2
EXIT_TRANSPORT = 3
EXIT_CONFIG = 4


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the config-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _int_arg(text: str) -> int:
    return int(text, 0)


def _load(args, default_preset: str | None = None):
    if getattr(args, "config", None):
        scenario = load_scenario(args.config)
    else:
        preset = getattr(args, "preset", None) or default_preset
        if preset is None:
            raise ConfigError("give either --config or --preset")
        scenario = builtin_scenario(preset)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    if getattr(args, "transport", None) is not None:
        scenario = replace(scenario, transport=args.transport)
    return scenario


def _cmd_run(args) -> int:
    scenario = _load(args)
    outdir = Path(args.outdir) if args.outdir else Path("reports") / scenario.name
    report = run_scenario(scenario, outdir=outdir)
    print(f"scenario      {report.scenario}  ({report.mode}, seed {report.seed})")
    print(f"link          {report.length_km:g} km, {report.attenuation_db:g} dB, "
          f"detectors {report.detector_label}")
    print(f"sifted block  n_z={report.n_z}  n_x={report.n_x}  "
          f"elapsed {report.elapsed_s:.4g} s")
    print(f"error rates   q_z={report.q_z:.4f}  phi_raw={report.phi_z_raw:.4f}  "
          f"phi_upper={report.phi_z_upper:.4f}")
    print(f"secret key    {report.secret_len} bits  ({report.skr:.1f} bit/s)")
    print(f"artifacts     {outdir}")
    if scenario.expect_key and report.secret_len == 0:
        print("no key distilled although the scenario expects one", file=sys.stderr)
        return EXIT_NO_KEY
    return EXIT_OK


def _cmd_sweep(args) -> int:
    grid = np.arange(0.0, args.z_max + args.z_step / 2, args.z_step)
    outdir = Path(args.outdir) if args.outdir else Path("reports") / "dispersion"
    rows = sweep_dispersion(grid, outdir=outdir)
    print(f"{len(rows)} grid points out to {rows[-1]['z_km']:g} km -> {outdir}")
    crossing = next((r["z_km"] for r in rows if r["narrow_tuned_ps"] > 400.0), None)
    if crossing is not None:
        print(f"narrow-line preset crosses the 400 ps bin near {crossing:g} km")
    return EXIT_OK


def _cmd_stability(args) -> int:
    scenario = _load(args, default_preset="stability_bench")
    outdir = Path(args.outdir) if args.outdir else Path("reports") / "stability"
    modes = {"on": (True,), "off": (False,), "both": (True, False)}[args.loop]
    for on in modes:
        rows = stability_run(
            scenario,
            duration_s=args.hours * 3600.0,
            interval_s=args.interval_s,
            stabilizer_on=on,
            outdir=outdir,
        )
        skrs = np.array([r["skr"] for r in rows], dtype=float)
        fails = sum(r["failed"] for r in rows)
        label = "loop on " if on else "loop off"
        if skrs.mean() > 0:
            print(f"{label}  {len(rows)} intervals, {fails} failed, "
                  f"mean SKR {skrs.mean():.0f} bit/s, CV {skrs.std() / skrs.mean():.3f}")
        else:
            print(f"{label}  {len(rows)} intervals, {fails} failed, no key in any interval")
    print(f"artifacts     {outdir}")
    return EXIT_OK


_TABLE_DEFAULTS = ("metropolitan", "short_haul", "loss_budget_40db", "loss_budget_45db")


def _cmd_table(args) -> int:
    names = list(args.preset or ())
    paths = list(args.config or ())
    if not names and not paths:
        names = list(_TABLE_DEFAULTS)
    scenarios = [builtin_scenario(n) for n in names]
    scenarios += [load_scenario(p) for p in paths]
    if args.seed is not None:
        scenarios = [replace(s, seed=args.seed) for s in scenarios]
    if args.transport is not None:
        scenarios = [replace(s, transport=args.transport) for s in scenarios]
    outdir = Path(args.outdir) if args.outdir else Path("reports") / "table"
    reports = []
    for scenario in scenarios:
        print(f"running {scenario.name} ...", flush=True)
        reports.append(run_scenario(scenario))
    print(table_report(reports, outdir=outdir))
    print(f"artifacts     {outdir}")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    del args
    failures = 0

    def check(label: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        print(f"{'ok  ' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else ""))
        failures += 0 if ok else 1

    rows = sweep_dispersion(np.array([0.0, 50.0, 100.0, 200.0]))
    at_100 = rows[2]["fourier_limited_ps"]
    check("dispersion model, 40 ps pulse at 100 km", abs(at_100 - 155.5) < 1.0,
          f"{at_100:.1f} ps")
    scenario = builtin_scenario("bench_ideal")
    first = run_scenario(scenario)
    again = run_scenario(scenario)
    check("ideal bench distils a key", first.secret_len > 0,
          f"{first.secret_len} bits")
    check("ideal bench error rate at floor", first.q_z <= 1e-9, f"q_z={first.q_z:g}")
    check("replay is bit-identical", first == again)
    if failures:
        print(f"{failures} selftest check(s) failed", file=sys.stderr)
        return 1
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qkdlink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def scenario_flags(p) -> None:
        p.add_argument("--config", metavar="PATH", help="scenario file (INI)")
        p.add_argument("--preset", choices=available_presets(),
                       help="built-in scenario name")
        p.add_argument("--seed", type=_int_arg, default=None,
                       help="override the scenario seed")
        p.add_argument("--transport", choices=("loopback", "socket"), default=None,
                       help="override the classical-channel transport")
        p.add_argument("--outdir", metavar="DIR", default=None,
                       help="artifact directory (CSV + figures)")

    p_run = sub.add_parser("run", help="execute one scenario end to end")
    scenario_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep-dispersion",
                             help="broadened pulse width against fiber length")
    p_sweep.add_argument("--z-max", type=float, default=220.0,
                         help="last fiber length in km (default 220)")
    p_sweep.add_argument("--z-step", type=float, default=2.0,
                         help="grid step in km (default 2)")
    p_sweep.add_argument("--outdir", metavar="DIR", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_stab = sub.add_parser("stability",
                            help="sample a drifting link at fixed intervals")
    scenario_flags(p_stab)
    p_stab.add_argument("--hours", type=float, default=48.0,
                        help="simulated duration (default 48)")
    p_stab.add_argument("--interval-s", type=float, default=3600.0,
                        help="sampling interval in simulated seconds")
    p_stab.add_argument("--loop", choices=("on", "off", "both"), default="both",
                        help="run with the feedback loop on, off, or both")
    p_stab.set_defaults(func=_cmd_stability)

    p_table = sub.add_parser("table", help="run scenarios and print a summary table")
    p_table.add_argument("--preset", action="append", metavar="NAME",
                         help="built-in scenario, repeatable")
    p_table.add_argument("--config", action="append", metavar="PATH",
                         help="scenario file, repeatable")
    p_table.add_argument("--seed", type=_int_arg, default=None)
    p_table.add_argument("--transport", choices=("loopback", "socket"), default=None)
    p_table.add_argument("--outdir", metavar="DIR", default=None)
    p_table.set_defaults(func=_cmd_table)

    p_self = sub.add_parser("selftest", help="fast end-to-end smoke check")
    p_self.set_defaults(func=_cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, ConnectionError, TimeoutError) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
