"""Command-line front end: run, sweep, validate and calibrate."""

from __future__ import annotations

import argparse
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from contextmesh.broker.core import BrokerError
from contextmesh.broker.topology import TopologyError, validate_topology
from contextmesh.contextml.model import ContextMLError
from contextmesh.harness.config import (
    ConfigError, Mode, ScenarioConfig, default_scenario_path, load_config, validate_config,
)
from contextmesh.harness.metrics import CSV_COLUMNS, Metrics, write_csv
from contextmesh.harness.sim import run as simulate
from contextmesh.harness.world import build_scenario
from contextmesh.netsim import (
    CallRole, MEASURED, MEASURED_CALLS, TransportClass, apply_overrides, latency_problems,
    parse_overrides, per_call_rows_mj, row_ratios, ratio_of_means, row_totals_j,
)

EXIT_OK, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2
OUT_DIR_ENV = "CONTEXTMESH_OUT_DIR"


class UsageError(Exception):
    """Bad flag combination or malformed argument; exits with status 1."""


# -- helpers -----------------------------------------------------------------------

def _load(path: Optional[str], energy_file: Optional[str] = None) -> ScenarioConfig:
    cfg = load_config(path or default_scenario_path())
    if energy_file:
        try:
            values = parse_overrides(Path(energy_file).read_text(encoding="utf-8"), energy_file)
            apply_overrides(values)
        except (OSError, ValueError) as exc:
            raise ConfigError("--energy-overrides", str(exc)) from None
        cfg = cfg.with_overrides(energy={**cfg.energy, **values})
    return cfg


def _apply_flags(cfg: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    if getattr(args, "mode", None):
        kw["mode"] = Mode(args.mode)
    if getattr(args, "bulk", False):
        kw["bulk_mode"] = True
    if getattr(args, "local_transport", None):
        kw["local_transport"] = TransportClass.local(args.local_transport)
    if getattr(args, "queries", None) is not None:
        kw["workload__n_queries"] = args.queries
    if getattr(args, "availability", None) is not None:
        kw["availability__up_fraction"] = args.availability
    return cfg.with_overrides(**kw) if kw else cfg


def _check(cfg: ScenarioConfig) -> None:
    errors = validate_config(cfg)
    if errors:
        raise errors[0]


def _out_dir(arg: Optional[str]) -> Path:
    path = Path(arg or os.environ.get(OUT_DIR_ENV) or "out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def rep_seeds(cell_seed: int, reps: int) -> list[int]:
    """Seeds for the repetitions of one sweep cell, derived from the cell seed."""
    children = np.random.SeedSequence(cell_seed).spawn(reps)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def run_once(cfg: ScenarioConfig, seed: int, trace: bool = False):
    return simulate(build_scenario(cfg, seed=seed, trace=trace))


# -- run ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    if args.mode == "nobroker" and args.bulk:
        raise UsageError("--bulk requires the device broker; it cannot be combined with --mode nobroker")
    cfg = _apply_flags(_load(args.scenario, args.energy_overrides), args)
    _check(cfg)
    result = run_once(cfg, args.seed, trace=not args.no_trace)
    out = _out_dir(args.out_dir)
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_csv([result.metrics.csv_row()], fh)
    if not args.no_trace:
        with open(out / "trace.log", "w", encoding="utf-8") as fh:
            result.trace.write(fh)
    print(result.metrics.summary())
    return EXIT_OK


# -- sweep -------------------------------------------------------------------------

AXES = ("queries", "availability", "transport")
MODES = {"broker": (Mode.BROKERED, False), "nobroker": (Mode.NO_BROKER, False),
         "bulk": (Mode.BROKERED, True)}


def parse_axis(text: str) -> tuple[str, list]:
    name, sep, spec = text.partition(":")
    if not sep or name not in AXES or not spec:
        raise UsageError(f"malformed axis {text!r}; expected one of "
                         "queries:N,N,... | availability:HI..LO:STEP | transport:ipc,socket,http")
    try:
        if name == "queries":
            values = [int(v) for v in spec.split(",")]
            if any(v < 1 for v in values):
                raise ValueError
        elif name == "transport":
            values = [TransportClass.local(v).value for v in spec.split(",")]
        elif ".." in spec:
            lo_hi, step_sep, step = spec.partition(":")
            start, _, stop = lo_hi.partition("..")
            start, stop, step = float(start), float(stop), float(step) if step_sep else 0.1
            if step <= 0:
                raise ValueError
            n = int(round(abs(start - stop) / step))
            if abs(n * step - abs(start - stop)) > 1e-9:
                raise ValueError
            sign = -1 if stop < start else 1
            values = [round(start + sign * i * step, 10) for i in range(n + 1)]
        else:
            values = [float(v) for v in spec.split(",")]
        if name == "availability" and any(not 0.5 <= v <= 1.0 for v in values):
            raise ValueError
    except ValueError:
        raise UsageError(f"malformed axis values in {text!r}") from None
    if not values:
        raise UsageError(f"axis {text!r} has no values")
    return name, values


def parse_modes(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise UsageError(f"unknown mode(s) {bad}; choose from {', '.join(MODES)}")
    return modes


@dataclass
class SweepCell:
    index: int
    axis: str
    value: object
    mode: str
    cell_seed: int
    reps: list[Metrics]
    mean: Metrics

    @property
    def spread(self) -> float:
        """Largest relative deviation of a repetition's device energy from the cell mean."""
        m = self.mean.device_energy_mj
        return max(abs(r.device_energy_mj - m) / m for r in self.reps) if m else 0.0


def _cell_config(base: ScenarioConfig, axis: str, value, mode: str) -> ScenarioConfig:
    m, bulk = MODES[mode]
    kw = {"mode": m, "bulk_mode": bulk}
    if axis == "queries":
        kw["workload__n_queries"] = value
    elif axis == "availability":
        kw["availability__up_fraction"] = value
    else:
        kw["local_transport"] = TransportClass.local(value)
    return base.with_overrides(**kw)


def _run_job(job):
    cfg, seed = job
    return run_once(cfg, seed).metrics


def mean_metrics(reps: Sequence[Metrics], seed: int) -> Metrics:
    first = reps[0]
    values = {}
    for f in fields(Metrics):
        v = getattr(first, f.name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or f.name in (
                "n_queries", "availability", "seed"):
            values[f.name] = v
        else:
            mean = statistics.fmean(getattr(r, f.name) for r in reps)
            values[f.name] = round(mean) if isinstance(v, int) else mean
    values["seed"] = seed
    return Metrics(**values)


def sweep(base: ScenarioConfig, seed: int, axis: str, values: list, modes: list[str],
          reps: int = 5, workers: int = 1) -> list[SweepCell]:
    """Run every (cell, mode) pair ``reps`` times; cell seeds are ``seed + cell index``."""
    plan = []
    for i, value in enumerate(values):
        for mode in modes:
            cfg = _cell_config(base, axis, value, mode)
            _check(cfg)
            plan.append((i, value, mode, cfg))
    jobs = [(cfg, s) for i, _, _, cfg in plan for s in rep_seeds(seed + i, reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    cells = []
    for k, (i, value, mode, _) in enumerate(plan):
        rep_metrics = results[k * reps:(k + 1) * reps]
        cells.append(SweepCell(i, axis, value, mode, seed + i, rep_metrics,
                               mean_metrics(rep_metrics, seed + i)))
    return cells


def cmd_sweep(args) -> int:
    axis, values = parse_axis(args.axis)
    modes = parse_modes(args.modes)
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    if args.mode is not None or args.bulk:
        raise UsageError("use --modes with sweep")
    base = _apply_flags(_load(args.scenario, args.energy_overrides), args)
    cells = sweep(base, args.seed, axis, values, modes, args.reps, args.workers)
    out = _out_dir(args.out_dir)
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as fh:
        write_csv([c.mean.csv_row() for c in cells], fh)
    with open(out / "reps.csv", "w", encoding="utf-8", newline="") as fh:
        write_csv([r.csv_row() for c in cells for r in c.reps], fh)
    with open(out / "spread.csv", "w", encoding="utf-8", newline="") as fh:
        cols = ("cell", "axis", "value", "mode", "cellSeed", "reps", "deviceEnergy_mJ", "spread")
        write_csv([{"cell": c.index, "axis": axis, "value": c.value, "mode": c.mode,
                    "cellSeed": c.cell_seed, "reps": len(c.reps),
                    "deviceEnergy_mJ": f"{c.mean.device_energy_mj:.3f}",
                    "spread": f"{c.spread:.4f}"} for c in cells], fh, columns=cols)
    for c in cells:
        print(f"{axis}={c.value} mode={c.mode} device={c.mean.device_energy_mj / 1000:.3f}J "
              f"perQuery={c.mean.mean_per_query_mj:.2f}mJ hitRate={c.mean.hit_rate:.3f} "
              f"spread={100 * c.spread:.2f}%")
    return EXIT_OK


# -- validate ----------------------------------------------------------------------

def validation_report(path: Optional[str]) -> list[tuple[str, bool, str]]:
    checks = []
    try:
        cfg = load_config(path or default_scenario_path())
    except ConfigError as exc:
        return [("parse", False, str(exc))]
    checks.append(("parse", True, ""))
    try:
        validate_topology([b.id for b in cfg.brokers], cfg.edges)
        checks.append(("topology", True, ""))
    except TopologyError as exc:
        checks.append(("topology", False, f"{type(exc).__name__}: {exc}"))
    try:
        _, latencies = cfg.energy_model()
        problems = latency_problems(latencies, cfg.allow_unconstrained_latency)
    except ValueError as exc:
        problems = [str(exc)]
    checks.append(("latency", not problems, "; ".join(problems)))
    rest = [e for e in validate_config(cfg) if e.path not in ("edges", "energy")]
    checks.append(("scenario", not rest, "; ".join(str(e) for e in rest)))
    return checks


def cmd_validate(args) -> int:
    checks = validation_report(args.scenario)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_CONFIG


# -- calibrate ---------------------------------------------------------------------

def calibration_report(model=None) -> str:
    from contextmesh.netsim import calibrate_from_measurements
    model = model or calibrate_from_measurements()
    lines = ["Measured rows (J, caller+callee):"]
    for mech in MEASURED:
        totals = ", ".join(f"{n} calls={t:.3f}" for n, t in zip(MEASURED_CALLS, row_totals_j(mech)))
        lines.append(f"  {mech:8s} {totals}")
    lines.append("Per-call means (mJ):")
    lines.append(f"  {'class':12s} {'caller':>9s} {'callee':>9s} {'total':>9s} {'callee%':>8s}")
    for cls in TransportClass:
        lines.append(f"  {cls.name:12s} {model.per_call(cls, CallRole.CALLER):9.5f} "
                     f"{model.per_call(cls, CallRole.CALLEE):9.5f} {model.per_call_total(cls):9.5f} "
                     f"{100 * model.callee_share(cls):7.1f}%")
    for mech in ("HTTP", "Sockets"):
        ratios = ", ".join(f"{r:.2f}" for r in row_ratios(mech, "IPC"))
        lines.append(f"{mech}/IPC row ratios: {ratios}; ratio of means {ratio_of_means(mech):.2f}")
    per_row = ", ".join(f"{v:.3f}" for v in per_call_rows_mj("HTTP"))
    lines.append(f"HTTP per-call by row (mJ): {per_row}")
    lines.append(f"Device-side extras: radio {model.radio_per_call_mj:g} mJ/remote call, "
                 f"broker start {model.broker_start_mj:g} mJ, bulk hold {model.bulk_hold_mw:g} mW, "
                 f"poll {model.cpu_poll_mj:g} mJ")
    return "\n".join(lines)


def cmd_calibrate(args) -> int:
    from contextmesh.netsim import calibrate_from_measurements
    model = calibrate_from_measurements()
    if args.energy_overrides:
        try:
            values = parse_overrides(Path(args.energy_overrides).read_text(encoding="utf-8"),
                                     args.energy_overrides)
            model, _ = apply_overrides(values, model)
        except (OSError, ValueError) as exc:
            raise ConfigError("--energy-overrides", str(exc)) from None
    print(calibration_report(model))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.5 <= value <= 1.0:
        raise argparse.ArgumentTypeError("availability must be in [0.5, 1.0]")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contextmesh", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, needs_seed=True):
        sp.add_argument("--scenario", help="scenario TOML file (default: bundled default.toml)")
        if needs_seed:
            sp.add_argument("--seed", type=_u64, required=True)
            sp.add_argument("--out-dir", help=f"output directory (default: ${OUT_DIR_ENV} or ./out)")
            sp.add_argument("--mode", choices=["broker", "nobroker"])
            sp.add_argument("--bulk", action="store_true")
            sp.add_argument("--local-transport", choices=["ipc", "socket", "http"])
            sp.add_argument("--queries", type=_positive)
            sp.add_argument("--availability", type=_fraction)
            sp.add_argument("--energy-overrides", help="flat key=value energy/latency override file")

    sp = sub.add_parser("run", help="simulate one scenario")
    common(sp)
    sp.add_argument("--no-trace", action="store_true", help="skip writing trace.log")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="simulate a parameter sweep")
    common(sp)
    sp.add_argument("--axis", required=True,
                    help="queries:100,1000,2000,5000 | availability:1.0..0.5:0.1 | transport:ipc,socket,http")
    sp.add_argument("--modes", default="broker,nobroker", help="comma list of broker, nobroker, bulk")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--workers", type=_positive, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="check a scenario without simulating")
    common(sp, needs_seed=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("calibrate", help="print the calibrated energy model")
    sp.add_argument("--energy-overrides")
    sp.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, BrokerError, ContextMLError) as exc:
        print(f"internal invariant breach: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main_exit() -> None:
    sys.exit(main())
