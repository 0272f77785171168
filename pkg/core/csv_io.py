"""
Aggregate tables: CSV export/import, plain-text rendering and
plot-ready data files.

EC and EVC render with 3 decimals, rounds and evidence with 2.
"""

import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core.errors import HarnessError

logger = logging.getLogger(__name__)

AGGREGATE_HEADERS = ["system", "cases", "ec", "evc", "rounds", "evidence", "tokens", "latency_s"]


@dataclass(frozen=True)
class AggregateRow:
    system: str
    cases: int
    ec_mean: float
    evc_mean: float
    rounds_mean: float
    evidence_mean: float
    tokens_mean: Optional[float] = None
    latency_mean: Optional[float] = None

    def cells(self):
        """Formatted CSV cells; absent token/latency columns stay empty."""
        return [
            self.system,
            str(self.cases),
            f"{self.ec_mean:.3f}",
            f"{self.evc_mean:.3f}",
            f"{self.rounds_mean:.2f}",
            f"{self.evidence_mean:.2f}",
            "" if self.tokens_mean is None else f"{self.tokens_mean:.1f}",
            "" if self.latency_mean is None else f"{self.latency_mean:.2f}",
        ]


def _optional_mean(values):
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.mean(present))


def aggregate(system, traces) -> AggregateRow:
    """
    Means over per-case values of a list of run traces.

    Args:
        system (str): Row label
        traces (list): RunTrace objects of one system

    Raises:
        HarnessError: If traces is empty
    """
    if not traces:
        raise HarnessError(f"no traces to aggregate for '{system}'")
    return AggregateRow(
        system=system,
        cases=len(traces),
        ec_mean=float(np.mean([t.final.ec for t in traces])),
        evc_mean=float(np.mean([t.final.evc for t in traces])),
        rounds_mean=float(np.mean([t.rounds_executed for t in traces])),
        evidence_mean=float(np.mean([t.evidence_total for t in traces])),
        tokens_mean=_optional_mean([t.tokens_total for t in traces]),
        latency_mean=_optional_mean([t.latency_total for t in traces]),
    )


def aggregate_records(system, records) -> AggregateRow:
    """Same as aggregate() but over trace dicts read back from a trace file."""
    if not records:
        raise HarnessError(f"no traces to aggregate for '{system}'")

    def usage(record, key):
        values = [r.get(key) for r in record["rounds"] if r.get(key) is not None]
        return sum(values) if values else None

    return AggregateRow(
        system=system,
        cases=len(records),
        ec_mean=float(np.mean([r["final"]["ec"] for r in records])),
        evc_mean=float(np.mean([r["final"]["evc"] for r in records])),
        rounds_mean=float(np.mean([len(r["rounds"]) for r in records])),
        evidence_mean=float(np.mean([r["evidence_total"] for r in records])),
        tokens_mean=_optional_mean([usage(r, "tokens") for r in records]),
        latency_mean=_optional_mean([usage(r, "latency_s") for r in records]),
    )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def export_aggregates(rows, output_path, extra_columns=None):
    """
    Write aggregate rows to a CSV file.

    Args:
        rows (list): AggregateRow objects
        output_path (str): Destination CSV file path
        extra_columns (list): Optional (header, values) pairs prepended to
            every row, e.g. ("delta", [...]) for sweeps

    Notes:
        CSV is encoded as UTF-8 with standard comma delimiter.
    """
    extra_columns = extra_columns or []
    folder = os.path.dirname(output_path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(output_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([name for name, _ in extra_columns] + AGGREGATE_HEADERS)
        for index, row in enumerate(rows):
            writer.writerow([str(values[index]) for _, values in extra_columns] + row.cells())
    logger.info("Wrote %d aggregate rows to %s", len(rows), output_path)


def read_table(csv_path):
    """
    Read any harness CSV back as header plus rows of strings.

    Raises:
        HarnessError: If the file is missing or empty
    """
    if not os.path.isfile(csv_path):
        raise HarnessError(f"table not found: {csv_path}")
    with open(csv_path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        headers = next(reader, None)
        if not headers:
            raise HarnessError(f"table is empty: {csv_path}")
        return headers, [row for row in reader if row]


def write_plot_data(output_path, headers, rows):
    """
    Write a plot-ready data file (plain CSV, numbers unformatted).

    Args:
        output_path (str): Destination file
        headers (list): Column names
        rows (list): Row value lists
    """
    folder = os.path.dirname(output_path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(output_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(headers)
        for row in rows:
            writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])


# ---------------------------------------------------------------------------
# Text rendering
# ---------------------------------------------------------------------------

def render_table(headers: List[str], rows: List[List[str]], title=None):
    """
    Render a table as aligned plain text.

    Args:
        headers (list): Column names
        rows (list): Row cell lists (already formatted strings)
        title (str): Optional caption line

    Returns:
        str: Text block ending without a trailing newline
    """
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [cell.rjust(widths[i + 1]) for i, cell in enumerate(cells[1:])]
        return "  ".join([first] + rest).rstrip()

    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    out = [title] if title else []
    out += [line(headers), rule]
    out += [line(row) for row in rows]
    return "\n".join(out)


def render_aggregates(rows, title=None):
    return render_table(AGGREGATE_HEADERS, [row.cells() for row in rows], title)


def render_csv(csv_path):
    """Plain-text rendering of one CSV file, captioned by its file name."""
    headers, rows = read_table(csv_path)
    title = os.path.splitext(os.path.basename(csv_path))[0]
    return render_table(headers, rows, title)
