"""
mono_gbdt/reporter.py — Format experiment results for terminal, CSV and markdown.
"""
from __future__ import annotations

import math
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from mono_gbdt.config import OUTPUT_DIR, CheckResult, CheckStatus

STATUS_ICONS = {
    CheckStatus.PASS: "✅",
    CheckStatus.FAIL: "❌",
    CheckStatus.WARN: "⚠️",
}

STATUS_COLORS = {
    CheckStatus.PASS: "\033[92m",  # green
    CheckStatus.FAIL: "\033[91m",  # red
    CheckStatus.WARN: "\033[93m",  # yellow
}
RESET = "\033[0m"

CSV_FLOAT_FORMAT = "%.10g"


def _cell(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.6g}"
    return str(value)


def format_table(frame: pd.DataFrame, max_rows: int = 40) -> list[str]:
    """Fixed-width text rendering of a DataFrame."""
    shown = frame.head(max_rows)
    header = [str(c) for c in shown.columns]
    rows = [[_cell(v) for v in record] for record in shown.itertuples(index=False)]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)
    if len(frame) > max_rows:
        lines.append(f"… {len(frame) - max_rows} more rows")
    return lines


def print_table(title: str, frame: pd.DataFrame, max_rows: int = 40) -> None:
    print()
    print(f"  ── {title} ──")
    for line in format_table(frame, max_rows):
        print(f"    {line}")
    print()


def print_checks(title: str, checks: Sequence[CheckResult]) -> None:
    """Print a PASS/FAIL summary of experiment checks."""
    passed = sum(1 for c in checks if c.status is CheckStatus.PASS)
    failed = sum(1 for c in checks if c.status is CheckStatus.FAIL)
    warned = sum(1 for c in checks if c.status is CheckStatus.WARN)

    print()
    print("=" * 70)
    print(f"  {title}")
    print(f"  {datetime.now().strftime('%Y-%m-%d %H:%M')}")
    print("=" * 70)
    print(f"  TOTAL: {len(checks)}  |  ✅ {passed}  ❌ {failed}  ⚠️ {warned}")
    print()
    for c in checks:
        icon = STATUS_ICONS[c.status]
        color = STATUS_COLORS[c.status]
        print(f"    {icon} {color}{c.name}{RESET}")
        print(f"       {c.message[:120]}")
        if c.evidence and c.status is not CheckStatus.PASS:
            for line in c.evidence.split("\n")[:3]:
                print(f"       → {line[:100]}")
    print()


def write_csv(frame: pd.DataFrame, path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return str(path)


def _markdown_table(frame: pd.DataFrame, max_rows: int = 60) -> list[str]:
    shown = frame.head(max_rows)
    lines = [
        "| " + " | ".join(str(c) for c in shown.columns) + " |",
        "|" + "|".join("---" for _ in shown.columns) + "|",
    ]
    for record in shown.itertuples(index=False):
        lines.append("| " + " | ".join(_cell(v) for v in record) + " |")
    if len(frame) > max_rows:
        lines.append(f"")
        lines.append(f"_{len(frame) - max_rows} more rows in the CSV._")
    return lines


def to_markdown(
    title: str,
    sections: dict[str, pd.DataFrame],
    checks: Sequence[CheckResult] = (),
    output_dir: Optional[str] = None,
    stem: str = "benchmark_report",
) -> str:
    """Write a timestamped markdown report. Returns the file path."""
    out = Path(output_dir or OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)

    lines = [
        f"# {title}",
        f"",
        f"**Date:** {datetime.now().strftime('%Y-%m-%d %H:%M')}",
        f"",
    ]

    failed = [c for c in checks if c.status is CheckStatus.FAIL]
    if failed:
        lines.append("## ❌ Failed checks")
        lines.append("")
        for c in failed:
            lines.append(f"### {c.name}")
            lines.append(f"**Category:** {c.category} | **Check ID:** `{c.check_id}`")
            lines.append("")
            lines.append(c.message)
            if c.evidence:
                lines.append("```")
                lines.append(c.evidence[:500])
                lines.append("```")
            lines.append("")
    others = [c for c in checks if c.status is not CheckStatus.FAIL]
    if others:
        lines.append("## Checks")
        lines.append("")
        for c in others:
            lines.append(f"- {STATUS_ICONS[c.status]} **{c.name}** ({c.category}): {c.message[:150]}")
        lines.append("")

    for heading, frame in sections.items():
        lines.append(f"## {heading}")
        lines.append("")
        lines.extend(_markdown_table(frame))
        lines.append("")

    filepath = out / f"{stem}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.md"
    filepath.write_text("\n".join(lines), encoding="utf-8")
    return str(filepath)
