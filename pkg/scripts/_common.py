from __future__ import annotations

import argparse

from contextmesh.cli import main


def sweep_script(description: str, axis: str, modes: str, extra=()) -> int:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seed", default="1")
    p.add_argument("--reps", default="5")
    p.add_argument("--workers", default="1")
    p.add_argument("--out-dir", default=None)
    args = p.parse_args()
    argv = ["sweep", "--axis", axis, "--modes", modes, "--seed", args.seed,
            "--reps", args.reps, "--workers", args.workers, *extra]
    if args.out_dir:
        argv += ["--out-dir", args.out_dir]
    return main(argv)
