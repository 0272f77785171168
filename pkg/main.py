"""
Consultation Map Harness - Main entry point.

Command-line experiment harness for coverage-driven retrieval control:
generates pilots, runs systems, sweeps thresholds and budgets, and renders
plain-text reports.

Usage:
    python main.py run --systems all --out runs/main
    python main.py sweep-budget --no-stop --out runs/budget
    python main.py generate --seed 42 --n 30 --out pilots/seed42.yaml
"""

import argparse
import logging
import sys

from core.constants import (
    APP_NAME,
    APP_VERSION,
    DEFAULT_BUDGETS,
    DEFAULT_DELTAS,
    DEFAULT_SEEDED_PILOT_SIZE,
    DEFAULT_SEEDS,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    SETTINGS_FILE,
    STRATIFIED_SUBSET_SIZE,
)
from core.errors import HarnessError, UsageError
from core import harness
from core.settings import HarnessSettings

__version__ = APP_VERSION


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


class _Parser(argparse.ArgumentParser):
    """Argument errors become UsageError so they share the exit-code path."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="main.py", description=f"{APP_NAME} v{APP_VERSION}")
    parser.add_argument("--config", default=SETTINGS_FILE, help="settings file (JSON)")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sub, systems_default=None):
        sub.add_argument("--pilot", help="pilot manifest (default: canonical pilot)")
        sub.add_argument("--corpus", help="corpus file (default: settings)")
        sub.add_argument("--out", help="output directory (default: settings, runs)")
        sub.add_argument("--jobs", type=int, default=None, help="parallel cases (default: settings, 1)")
        if systems_default is not None:
            sub.add_argument("--systems", default=systems_default,
                             help="comma-separated systems or 'all' "
                                  "(rule, oracle, external, no-threshold-stop, no-graph, fixed-N)")

    gen = verbs.add_parser("generate", help="emit the canonical or a seeded pilot")
    gen.add_argument("--canonical", action="store_true")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--n", type=int, help=f"cases in a seeded pilot (default {DEFAULT_SEEDED_PILOT_SIZE})")
    gen.add_argument("--corpus", help=argparse.SUPPRESS)
    gen.add_argument("--out", required=True, help="manifest file to write")

    common(verbs.add_parser("run", help="run systems over a pilot"), "all")

    sweep_t = verbs.add_parser("sweep-threshold", help="sweep the marginal-gain threshold")
    common(sweep_t)
    sweep_t.add_argument("--deltas", type=_floats, default=list(DEFAULT_DELTAS))
    sweep_t.add_argument("--selector", choices=("rule", "oracle", "external"), default="rule")

    sweep_b = verbs.add_parser("sweep-budget", help="sweep the round budget on hard or stratified cases")
    common(sweep_b)
    sweep_b.add_argument("--budgets", type=_ints, default=list(DEFAULT_BUDGETS))
    sweep_b.add_argument("--selector", choices=("rule", "oracle", "external"), action="append",
                         help="policy to sweep; repeatable (default: rule and oracle)")
    sweep_b.add_argument("--no-stop", action="store_true", help="add hard-no-stop rows")
    sweep_b.add_argument("--stratified", type=int, nargs="?", const=STRATIFIED_SUBSET_SIZE,
                         help=f"sweep a stratified subset of this size (bare flag: {STRATIFIED_SUBSET_SIZE})")

    common(verbs.add_parser("hard-cases", help="write the rule policy's failure cases"))

    multi = verbs.add_parser("multi-seed", help="run systems on seeded pilots")
    common(multi, "rule,oracle")
    multi.add_argument("--seeds", type=_ints, default=list(DEFAULT_SEEDS))
    multi.add_argument("--n", type=int, default=DEFAULT_SEEDED_PILOT_SIZE)

    diag = verbs.add_parser("diagnose", help="case-type diagnostic matrix")
    common(diag, "rule,oracle")
    diag.add_argument("--traces", help="trace directory of an earlier run (default: run now)")

    report = verbs.add_parser("report", help="render aggregate tables of an output directory")
    report.add_argument("--out", help="output directory to report on (default: settings, runs)")
    return parser


def _spec(args, settings, systems=True):
    return harness.ExperimentSpec(
        pilot=args.pilot,
        systems=harness.parse_systems(args.systems) if systems else (),
        deltas=getattr(args, "deltas", DEFAULT_DELTAS),
        budgets=getattr(args, "budgets", DEFAULT_BUDGETS),
        seeds=getattr(args, "seeds", DEFAULT_SEEDS),
        output_dir=args.out or settings.get("output_dir"),
        jobs=args.jobs if args.jobs is not None else settings.jobs,
    )


def run(argv=None):
    """
    Parse arguments and dispatch to the harness.

    Returns:
        int: Exit code (0 success, 1 runtime failure, 2 usage error)
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    settings = HarnessSettings(args.config)

    try:
        if args.verb == "report":
            print(harness.cmd_report(args.out or settings.get("output_dir")))
            return EXIT_OK

        ctx = harness.HarnessContext.load(settings, getattr(args, "corpus", None))
        if args.verb == "generate":
            harness.cmd_generate(ctx, args.out, args.canonical, args.seed, args.n, log=print)
        elif args.verb == "run":
            rows = harness.cmd_run(ctx, _spec(args, settings))
            print(harness.csv_io.render_aggregates(rows))
        elif args.verb == "sweep-threshold":
            spec = _spec(args, settings, systems=False)
            harness.cmd_sweep_threshold(ctx, spec, policy=args.selector, log=print)
        elif args.verb == "sweep-budget":
            spec = _spec(args, settings, systems=False)
            harness.cmd_sweep_budget(ctx, spec, policies=tuple(args.selector or ("rule", "oracle")),
                                     no_stop=args.no_stop, stratified=args.stratified, log=print)
        elif args.verb == "hard-cases":
            harness.cmd_hard_cases(ctx, _spec(args, settings, systems=False), log=print)
        elif args.verb == "multi-seed":
            harness.cmd_multi_seed(ctx, _spec(args, settings), n=args.n, log=print)
        elif args.verb == "diagnose":
            harness.cmd_diagnose(ctx, _spec(args, settings), traces_dir=args.traces, log=print)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except HarnessError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    if settings.recent_outputs and settings.recent_outputs != settings.get("recent_outputs"):
        try:
            settings.save_settings()
        except OSError as e:
            logging.getLogger(__name__).warning("Could not save settings: %s", e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
