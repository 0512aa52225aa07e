"""
Utility script for inspecting a training metrics log.

The training processor appends one `key=value` record per optimizer step.
This script groups the records by phase and reports step ranges, loss
statistics, the largest gradient norms and every record with a non-finite
value. It is intended for manual use after or during a training run.
"""
from __future__ import annotations

import argparse
import math
import sys
from collections import defaultdict
from pathlib import Path
from typing import DefaultDict, Dict, Iterable, List

NUMERIC_KEYS: List[str] = ["lr", "total", "l2", "perceptual", "opacity", "grad_norm", "clipped_norm"]


def parse_args(argv: Iterable[str]) -> argparse.Namespace:
    """
    Parses CLI arguments for runtime configuration.
    Args:
        argv: Iterable of command line arguments, typically sys.argv[1:].
    Returns:
        Namespace: Parsed arguments containing the log path and the tail length.
    """
    parser = argparse.ArgumentParser(description="Summarize a workbench training metrics log.")
    parser.add_argument("log", help="Path to the metrics log (metrics.log in the run directory).")
    parser.add_argument(
        "--tail",
        type=int,
        default=100,
        help="Number of final steps per phase used for the trailing mean loss (default: 100).",
    )
    return parser.parse_args(list(argv))


def parse_record(line: str) -> Dict[str, str]:
    """Splits one `key=value key=value` record into a dict; malformed fields are ignored."""
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if sep:
            fields[key] = value
    return fields


def load_records(path: Path) -> DefaultDict[str, List[Dict[str, str]]]:
    """
    Reads a metrics log grouped by phase.
    Raises:
        RuntimeError: If the log cannot be read.
    """
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as error:
        raise RuntimeError(f"Failed to read metrics log '{path}': {error}") from error
    grouped: DefaultDict[str, List[Dict[str, str]]] = defaultdict(list)
    for line in lines:
        record = parse_record(line)
        if "phase" in record and "step" in record:
            grouped[record["phase"]].append(record)
    return grouped


def _value(record: Dict[str, str], key: str) -> float:
    try:
        return float(record.get(key, "nan"))
    except ValueError:
        return float("nan")


def non_finite_records(records: List[Dict[str, str]]) -> List[Dict[str, str]]:
    return [r for r in records if any(key in r and not math.isfinite(_value(r, key)) for key in NUMERIC_KEYS)]


def print_report(grouped: DefaultDict[str, List[Dict[str, str]]], path: Path, tail: int) -> None:
    """
    Prints a per-phase report of the metrics log.
    Args:
        grouped: Records grouped by phase.
        path: The inspected log.
        tail: Number of final steps used for the trailing mean.
    """
    print(f"=== Training Log Report ===\nLog    : {path}\nPhases : {len(grouped)}\n===========================")
    if not grouped:
        print("No step records found.")
        return
    for phase, records in grouped.items():
        losses = [_value(r, "total") for r in records]
        finite = [v for v in losses if math.isfinite(v)]
        trailing = [v for v in losses[-tail:] if math.isfinite(v)]
        norms = [_value(r, "grad_norm") for r in records if math.isfinite(_value(r, "grad_norm"))]
        print(f"\n--- {phase}: steps {records[0]['step']}..{records[-1]['step']} ({len(records)} records) ---")
        if finite:
            print(f"first loss    : {finite[0]:.6f}")
            print(f"last loss     : {finite[-1]:.6f}")
            print(f"min loss      : {min(finite):.6f}")
        if trailing:
            print(f"trailing mean : {sum(trailing) / len(trailing):.6f} (last {len(trailing)})")
        if norms:
            print(f"max grad norm : {max(norms):.6f} (pre-clip)")
        bad = non_finite_records(records)
        if bad:
            print(f"non-finite    : {len(bad)} records")
            for record in bad:
                print(f"  - step {record['step']}: total={record.get('total')}")


def main(argv: Iterable[str]) -> None:
    """
    Entry point for the CLI utility.
    Args:
        argv: Iterable of command line arguments (usually sys.argv[1:]).
    """
    args = parse_args(argv)
    path = Path(args.log)
    try:
        grouped = load_records(path)
    except RuntimeError as error:
        print(str(error), file=sys.stderr)
        sys.exit(1)
    print_report(grouped, path, args.tail)


if __name__ == "__main__":
    main(sys.argv[1:])
