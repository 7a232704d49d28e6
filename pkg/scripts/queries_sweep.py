"""Device energy with and without the device broker as the query count grows."""

from __future__ import annotations

from _common import sweep_script

if __name__ == "__main__":
    raise SystemExit(sweep_script(__doc__, "queries:100,1000,2000,5000", "broker,nobroker"))
