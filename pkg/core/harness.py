"""
Experiment harness: runs systems over pilots and writes traces, aggregate
tables and plot-ready data.

Every cmd_* function backs one CLI verb. They take a loaded HarnessContext
so tests can call them without going through argparse.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from core import csv_io, trace_io
from core.constants import (
    CANONICAL_PILOT_FILE,
    DEFAULT_BUDGETS,
    DEFAULT_DELTAS,
    DEFAULT_SEEDED_PILOT_SIZE,
    DEFAULT_SEEDS,
    FIXED_N,
    MAP_NO_GRAPH,
    PILOT_LOCK_FILE,
)
from core.controller import (
    STANDARD_SYSTEMS,
    StopConfig,
    SystemConfig,
    default_selector,
    run_system,
    system_from_name,
)
from core.corpus import Corpus
from core.dataset import (
    canonical_pilot,
    generate_pilot,
    hard_case_subset,
    load_manifest,
    load_templates,
    stratified_subset,
    write_manifest,
)
from core.errors import RunError, UsageError
from core.policy import HardNoStopSelector
from core.selector_client import ExternalSelector
from core.settings import HarnessSettings

logger = logging.getLogger(__name__)

TRACE_DIR = "traces"


# ======================================================================
# Context and experiment description
# ======================================================================

@dataclass
class HarnessContext:
    """Corpus, templates and settings shared by every command."""
    corpus: Corpus
    templates: dict
    settings: HarnessSettings

    @classmethod
    def load(cls, settings: Optional[HarnessSettings] = None, corpus_path=None):
        settings = settings or HarnessSettings()
        corpus = Corpus.from_yaml(corpus_path or settings.get("corpus"), settings.get("synonyms"))
        templates = load_templates(settings.get("templates"))
        return cls(corpus, templates, settings)

    def schema(self, case):
        return self.templates[case.case_type].schema


@dataclass(frozen=True)
class ExperimentSpec:
    pilot: Optional[str]
    systems: Sequence[SystemConfig] = ()
    deltas: Sequence[float] = DEFAULT_DELTAS
    budgets: Sequence[int] = DEFAULT_BUDGETS
    seeds: Sequence[int] = DEFAULT_SEEDS
    output_dir: str = "runs"
    jobs: int = 1

    def validate(self, needs_systems=True):
        """
        Raises:
            UsageError: On an empty system list or an empty sweep grid
        """
        if needs_systems and not self.systems:
            raise UsageError("at least one system is required")
        for name in ("deltas", "budgets", "seeds"):
            if not getattr(self, name):
                raise UsageError(f"--{name} must not be empty")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        return self


def parse_systems(names, stop=None):
    """Comma-separated names, or 'all' for the standard seven-system set."""
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    if list(names) == ["all"]:
        names = STANDARD_SYSTEMS
    return [system_from_name(name, stop) for name in names]


def _default_log(message):
    logger.info(message)


# ======================================================================
# Shared plumbing
# ======================================================================

def load_pilot(ctx: HarnessContext, path=None):
    """
    Canonical pilot (checksum-verified) when path is empty or the canonical
    file, otherwise any manifest file.
    """
    path = path or ctx.settings.get("pilot") or CANONICAL_PILOT_FILE
    if os.path.abspath(path) == os.path.abspath(CANONICAL_PILOT_FILE):
        return canonical_pilot(path, PILOT_LOCK_FILE, ctx.templates)
    return load_manifest(path, ctx.templates)


def make_selector(system: SystemConfig, ctx: HarnessContext, schema=None):
    """
    Selector instance for a system.

    External selectors read endpoint, key, timeout and in-flight cap from
    the settings and are shared across cases.
    """
    if system.selector_kind != "external":
        return default_selector(system, schema, ctx.corpus)
    settings = ctx.settings
    selector = ExternalSelector(
        settings.selector_endpoint,
        settings.selector_api_key,
        timeout=settings.get("selector_timeout"),
        max_in_flight=settings.get("selector_max_in_flight"),
    )
    if system.hard_no_stop:
        selector = HardNoStopSelector(selector, system.stop.r_max)
    return selector


def run_manifest(ctx: HarnessContext, manifest, system: SystemConfig, jobs=1) -> List:
    """
    Run every case of a manifest through one system.

    Cases run in parallel when jobs > 1; traces come back in manifest order.

    Raises:
        RunError: From the first failing case
    """
    baseline = system.kind in (FIXED_N, MAP_NO_GRAPH)
    shared = make_selector(system, ctx) if system.selector_kind == "external" and not baseline else None

    def one(case):
        schema = ctx.schema(case)
        selector = shared
        if selector is None and not baseline:
            selector = make_selector(system, ctx, schema)
        return run_system(case, schema, ctx.corpus, system, selector)

    if jobs <= 1:
        return [one(case) for case in manifest.cases]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, manifest.cases))


def _write_system_traces(out_dir, name, traces):
    path = os.path.join(out_dir, TRACE_DIR, f"{name}.jsonl")
    trace_io.write_traces(traces, path)
    return path


def _run_and_record(ctx, manifest, system, out_dir, jobs, log):
    try:
        traces = run_manifest(ctx, manifest, system, jobs)
    except RunError as e:
        if e.trace is not None:
            _write_system_traces(out_dir, f"{system.name}.partial", [e.trace])
        raise
    _write_system_traces(out_dir, system.name, traces)
    row = csv_io.aggregate(system.name, traces)
    log(f"{system.name}: EC {row.ec_mean:.3f}  EVC {row.evc_mean:.3f}  "
        f"rounds {row.rounds_mean:.2f}  evidence {row.evidence_mean:.2f}")
    return traces, row


def _finish(ctx, out_dir, csv_name, rows, title, extra_columns=None):
    csv_path = os.path.join(out_dir, f"{csv_name}.csv")
    csv_io.export_aggregates(rows, csv_path, extra_columns)
    headers, cells = csv_io.read_table(csv_path)
    text = csv_io.render_table(headers, cells, title)
    with open(os.path.join(out_dir, f"{csv_name}.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")
    ctx.settings.add_recent_output(out_dir)
    return text


# ======================================================================
# Commands
# ======================================================================

def cmd_generate(ctx: HarnessContext, out, canonical=False, seed=None, n=None, log=None):
    """
    Emit the canonical pilot or a seeded one.

    Returns:
        str: sha256 of the written manifest

    Raises:
        UsageError: Without --canonical or --seed, or with n < 1
    """
    log = log or _default_log
    if n is not None and n < 1:
        raise UsageError(f"--n must be at least 1, got {n}")
    if canonical:
        manifest = canonical_pilot(CANONICAL_PILOT_FILE, PILOT_LOCK_FILE, ctx.templates)
    elif seed is not None:
        manifest = generate_pilot(seed, n or DEFAULT_SEEDED_PILOT_SIZE, ctx.templates)
    else:
        raise UsageError("generate needs --canonical or --seed")
    digest = write_manifest(manifest, out)
    log(f"Wrote {manifest.name} ({len(manifest)} cases) to {out}  sha256 {digest}")
    return digest


def cmd_run(ctx: HarnessContext, spec: ExperimentSpec, log: Optional[Callable] = None):
    """
    Run each system over the pilot.

    Writes traces/<system>.jsonl and aggregates.csv/.txt under the output
    directory.

    Returns:
        list: AggregateRow per system, in the given order
    """
    log = log or _default_log
    spec.validate()
    manifest = load_pilot(ctx, spec.pilot)
    rows = []
    for system in spec.systems:
        _, row = _run_and_record(ctx, manifest, system, spec.output_dir, spec.jobs, log)
        rows.append(row)
    _finish(ctx, spec.output_dir, "aggregates", rows, f"Main systems on {manifest.name}")
    return rows


def cmd_sweep_threshold(ctx: HarnessContext, spec: ExperimentSpec, policy="rule", log=None):
    """Aggregates of one policy per marginal-gain threshold delta."""
    log = log or _default_log
    spec.validate(needs_systems=False)
    manifest = load_pilot(ctx, spec.pilot)
    rows = []
    for delta in spec.deltas:
        system = system_from_name(policy, StopConfig(delta=float(delta)))
        system = replace(system, name=f"{policy}@delta={delta:g}")
        _, row = _run_and_record(ctx, manifest, system, spec.output_dir, spec.jobs, log)
        rows.append(row)

    deltas = [f"{d:g}" for d in spec.deltas]
    csv_io.write_plot_data(
        os.path.join(spec.output_dir, "threshold_sweep_plot.csv"),
        ["delta", "ec", "rounds", "evidence"],
        [[float(d), r.ec_mean, r.rounds_mean, r.evidence_mean] for d, r in zip(spec.deltas, rows)],
    )
    _finish(ctx, spec.output_dir, "threshold_sweep", rows, f"Threshold sweep ({policy}) on {manifest.name}",
            [("delta", deltas)])
    return rows


def budget_subset(ctx: HarnessContext, manifest, stratified=None, jobs=1):
    """Stratified subset of size k, or the rule policy's failure cases."""
    if stratified is not None:
        try:
            return stratified_subset(manifest, stratified)
        except ValueError as e:
            raise UsageError(f"--stratified: {e}") from e
    rule = system_from_name("rule")
    return hard_case_subset(run_manifest(ctx, manifest, rule, jobs), manifest)


def cmd_sweep_budget(ctx: HarnessContext, spec: ExperimentSpec, policies=("rule", "oracle"),
                     no_stop=False, stratified=None, log=None):
    """
    Per (policy, budget) aggregates over the hard-case subset.

    Args:
        no_stop (bool): Also run every policy under the hard-no-stop wrapper
        stratified (int): Sweep a stratified subset of this size instead
    """
    log = log or _default_log
    spec.validate(needs_systems=False)
    if not policies:
        raise UsageError("at least one policy is required")
    manifest = load_pilot(ctx, spec.pilot)
    subset = budget_subset(ctx, manifest, stratified, spec.jobs)
    if not subset.cases:
        raise UsageError(f"{manifest.name} has no cases for the budget sweep")
    log(f"Budget sweep over {subset.name} ({len(subset)} cases)")

    variants = [False, True] if no_stop else [False]
    rows, labels, budgets = [], [], []
    for policy in policies:
        for hard in variants:
            for budget in spec.budgets:
                system = system_from_name(policy, StopConfig(r_max=int(budget)), hard_no_stop=hard)
                label = f"{policy}-hard-no-stop" if hard else policy
                system = replace(system, name=f"{label}@r={budget}")
                _, row = _run_and_record(ctx, subset, system, spec.output_dir, spec.jobs, log)
                rows.append(row)
                labels.append(label)
                budgets.append(int(budget))

    csv_io.write_plot_data(
        os.path.join(spec.output_dir, "budget_sweep_plot.csv"),
        ["policy", "budget", "ec", "rounds", "evidence"],
        [[l, b, r.ec_mean, r.rounds_mean, r.evidence_mean] for l, b, r in zip(labels, budgets, rows)],
    )
    _finish(ctx, spec.output_dir, "budget_sweep", rows, f"Budget sweep on {subset.name}",
            [("policy", labels), ("budget", budgets)])
    return rows


def cmd_hard_cases(ctx: HarnessContext, spec: ExperimentSpec, log=None):
    """Write the rule policy's failure cases as a manifest file."""
    log = log or _default_log
    manifest = load_pilot(ctx, spec.pilot)
    subset = budget_subset(ctx, manifest, None, spec.jobs)
    os.makedirs(spec.output_dir, exist_ok=True)
    path = os.path.join(spec.output_dir, "hard_cases.yaml")
    write_manifest(subset, path)
    counts = ", ".join(f"{t} {c}" for t, c in subset.composition.items())
    log(f"{len(subset)} hard cases ({counts or 'none'}) written to {path}")
    return subset


def cmd_multi_seed(ctx: HarnessContext, spec: ExperimentSpec, n=DEFAULT_SEEDED_PILOT_SIZE, log=None):
    """
    Run each system on independently generated seeded pilots.

    Returns:
        tuple: (rows per (system, seed), {system: (ec_mean, ec_variance)})
    """
    log = log or _default_log
    spec.validate()
    if n < 1:
        raise UsageError(f"--n must be at least 1, got {n}")
    rows, seeds = [], []
    per_system = {system.name: [] for system in spec.systems}
    for seed in spec.seeds:
        manifest = generate_pilot(int(seed), n, ctx.templates)
        for system in spec.systems:
            seeded = replace(system, name=f"{system.name}@seed={seed}")
            _, row = _run_and_record(ctx, manifest, seeded, spec.output_dir, spec.jobs, log)
            rows.append(replace(row, system=system.name))
            seeds.append(int(seed))
            per_system[system.name].append(row.ec_mean)

    summary = {}
    for name, values in per_system.items():
        summary[name] = (float(np.mean(values)), float(np.var(values)))
        log(f"{name}: EC mean {summary[name][0]:.3f} across seeds, variance {summary[name][1]:.6f}")
    csv_io.write_plot_data(
        os.path.join(spec.output_dir, "multi_seed_variance.csv"),
        ["system", "ec_mean", "ec_variance"],
        [[name, mean, var] for name, (mean, var) in summary.items()],
    )
    _finish(ctx, spec.output_dir, "multi_seed", rows, f"Multi-seed robustness (n={n})", [("seed", seeds)])
    return rows, summary


def diagnose_records(records):
    """
    Case-type matrix from trace dicts.

    Returns:
        list: [case_type, system, cases, ec_mean, rounds_mean] sorted by
              (case_type, system)
    """
    groups = {}
    for record in records:
        groups.setdefault((record["case_type"], record["system"]), []).append(record)
    matrix = []
    for (case_type, system), group in sorted(groups.items()):
        matrix.append([
            case_type,
            system,
            len(group),
            float(np.mean([r["final"]["ec"] for r in group])),
            float(np.mean([len(r["rounds"]) for r in group])),
        ])
    return matrix


def cmd_diagnose(ctx: HarnessContext, spec: ExperimentSpec, traces_dir=None, log=None):
    """
    Per (case_type, system) EC and mean rounds.

    Reads every trace file under traces_dir; without one, runs the experiment's
    systems over the pilot first.
    """
    log = log or _default_log
    if traces_dir is None:
        spec.validate()
        manifest = load_pilot(ctx, spec.pilot)
        for system in spec.systems:
            _run_and_record(ctx, manifest, system, spec.output_dir, spec.jobs, log)
        traces_dir = os.path.join(spec.output_dir, TRACE_DIR)
    if not os.path.isdir(traces_dir):
        raise UsageError(f"trace directory not found: {traces_dir}")

    records = []
    for name in sorted(os.listdir(traces_dir)):
        if name.endswith(".jsonl") and ".partial" not in name:
            records.extend(trace_io.read_traces(os.path.join(traces_dir, name)))
    if not records:
        raise UsageError(f"no traces in {traces_dir}")

    matrix = diagnose_records(records)
    os.makedirs(spec.output_dir, exist_ok=True)
    csv_io.write_plot_data(os.path.join(spec.output_dir, "diagnose_plot.csv"),
                           ["case_type", "system", "cases", "ec", "rounds"], matrix)
    cells = [[t, s, str(c), f"{ec:.3f}", f"{r:.2f}"] for t, s, c, ec, r in matrix]
    text = csv_io.render_table(["case_type", "system", "cases", "ec", "rounds"], cells, "Case-type diagnostic")
    with open(os.path.join(spec.output_dir, "diagnose.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")
    log(text)
    return matrix


def cmd_report(out_dir):
    """Render every aggregate CSV in an output directory as text."""
    if not os.path.isdir(out_dir):
        raise UsageError(f"output directory not found: {out_dir}")
    names = sorted(n for n in os.listdir(out_dir) if n.endswith(".csv") and not n.endswith("_plot.csv"))
    names = [n for n in names if n != "multi_seed_variance.csv"]
    if not names:
        raise UsageError(f"no aggregate tables in {out_dir}")
    return "\n\n".join(csv_io.render_csv(os.path.join(out_dir, n)) for n in names)
