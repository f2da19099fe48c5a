"""Command-line front end: ``oulab run | suite | t0 | scenarios | plot``."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from oulab.errors import OulabError
from oulab.reports import dumps, write_atomic

EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


def bundled_scenarios() -> dict[str, Path]:
    root = resources.files("oulab") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def _resolve_config(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    if name in bundled:
        return bundled[name]
    return path  # let the loader report the unreadable file


def _cmd_run(args) -> int:
    from oulab.scenario import load_scenario, run_scenario

    scn = load_scenario(_resolve_config(args.config))
    result = run_scenario(scn, threads=args.threads)
    out = Path(args.outdir)
    result.trace.write_csv(out / f"{scn.name}.trace.csv")
    write_atomic(out / f"{scn.name}.report.json", dumps(result.report_document()))
    if args.figures:
        from oulab.plotting import plot_trace

        plot_trace(result.trace, out / f"{scn.name}.png", title=scn.name)
    for rep in result.reports:
        print(rep.summary())
    print(f"{'PASS' if result.passed else 'FAIL'}  scenario {scn.name}")
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def _cmd_suite(args) -> int:
    from oulab.inequalities import inject_fault
    from oulab.suites import run_battery

    inject_fault(args.inject_fault)
    try:
        results = run_battery(args.name, outdir=args.outdir, echo=print, figures=args.figures)
    finally:
        inject_fault(None)
    ok = all(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'}  suite {args.name}: {sum(r.passed for r in results)}/{len(results)} criteria")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_t0(args) -> int:
    from oulab.frequency import compute_T0

    print(repr(compute_T0(args.A, args.T).value))
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    for name in sorted(bundled_scenarios()):
        print(name)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from oulab.frequency import FrequencyTrace
    from oulab.plotting import plot_trace

    for csv_path in args.traces:
        src = Path(csv_path)
        try:
            trace = FrequencyTrace.read_csv(src)
        except (OSError, KeyError, ValueError) as exc:
            raise OulabError(f"cannot read trace {src}: {exc}") from exc
        target = Path(args.outdir) / (src.name.removesuffix(".csv").removesuffix(".trace") + ".png") \
            if args.outdir else src.with_suffix(".png")
        plot_trace(trace, target, title=src.stem)
        print(target)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oulab", description="Gaussian-space parabolic frequency lab")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario (JSON path or bundled name)")
    run.add_argument("config")
    run.add_argument("--outdir", default=".")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--figures", action="store_true", help="also render a PNG of the trace")
    run.set_defaults(func=_cmd_run)

    suite = sub.add_parser("suite", help="run an acceptance battery")
    suite.add_argument("name", choices=["identities", "monotonicity", "hardy", "vanishing", "all"])
    suite.add_argument("--outdir", default=None, help="write per-criterion reports and traces here")
    suite.add_argument("--figures", action="store_true")
    suite.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    suite.set_defaults(func=_cmd_suite)

    t0 = sub.add_parser("t0", help="print T0 for growth constant A and horizon T")
    t0.add_argument("--A", type=float, required=True)
    t0.add_argument("--T", type=float, required=True)
    t0.set_defaults(func=_cmd_t0)

    sc = sub.add_parser("scenarios", help="list bundled scenarios")
    sc.set_defaults(func=_cmd_scenarios)

    plot = sub.add_parser("plot", help="render trace CSV files to PNG")
    plot.add_argument("traces", nargs="+")
    plot.add_argument("--outdir", default=None)
    plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except OulabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
