"""Brokered device energy with IPC versus HTTP between device components."""

from __future__ import annotations

import argparse

from contextmesh.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", default="1")
    p.add_argument("--reps", default="5")
    p.add_argument("--out-dir", default="out/transport")
    args = p.parse_args()
    code = 0
    for transport in ("http", "ipc"):
        print(f"# local transport: {transport}")
        code |= main(["sweep", "--axis", "queries:100,1000,2000,5000", "--modes", "broker",
                      "--local-transport", transport, "--seed", args.seed, "--reps", args.reps,
                      "--out-dir", f"{args.out_dir}/{transport}"])
    raise SystemExit(code)
