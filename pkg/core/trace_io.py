"""
Trace files: one JSON object per run, one run per line.

Field order is fixed by RunTrace.to_dict, so reruns of deterministic
systems produce byte-identical files.
"""

import json
import logging
import os

from core.errors import HarnessError

logger = logging.getLogger(__name__)


def trace_line(trace, include_map=True):
    return json.dumps(trace.to_dict(include_map), ensure_ascii=False, separators=(",", ":"))


def write_traces(traces, path, include_map=True):
    """
    Write run traces as JSON lines.

    Args:
        traces (iterable): RunTrace objects, written in the given order
        path (str): Output file
        include_map (bool): Embed the final consultation map of each run

    Returns:
        int: Number of traces written
    """
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for trace in traces:
            f.write(trace_line(trace, include_map))
            f.write("\n")
            count += 1
    logger.info("Wrote %d traces to %s", count, path)
    return count


def read_traces(path):
    """
    Read a JSON-lines trace file back as plain dicts.

    Raises:
        HarnessError: If the file is missing or a line is not valid JSON
    """
    if not os.path.isfile(path):
        raise HarnessError(f"trace file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise HarnessError(f"{path}:{number}: invalid trace line: {e}") from e
    return records
