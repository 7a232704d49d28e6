"""Shared store for acceptance-criterion result lines (printed at session end)."""

from __future__ import annotations

LINES: dict[int, str] = {}


def record(number: int, title: str, checks) -> str:
    ok = all(c.ok for c in checks)
    parts = "; ".join(f"{c.name} {'ok' if c.ok else 'FAILED'} ({c.detail})" for c in checks)
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {parts}"
    LINES[number] = line
    print(line)
    return line
