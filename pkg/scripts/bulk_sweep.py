"""Bulk-mode forwarding compared with immediate brokering and no broker."""

from __future__ import annotations

from _common import sweep_script

if __name__ == "__main__":
    raise SystemExit(sweep_script(__doc__, "queries:100,1000,2000,5000", "broker,bulk,nobroker"))
