"""Brokered device energy per query as network availability drops from 1.0 to 0.5."""

from __future__ import annotations

from _common import sweep_script

if __name__ == "__main__":
    raise SystemExit(sweep_script(__doc__, "availability:1.0..0.5:0.1", "broker,nobroker",
                                  extra=("--queries", "1000")))
