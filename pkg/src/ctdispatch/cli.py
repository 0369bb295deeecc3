"""Command-line entry point: ``ctdispatch solve|verify|duckgen``."""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dispatch import SolveError, dispatch
from .market import DuckParams, IngestionError, Slack, duck_value, function_scenario, load_scenario, scenario_to_dict
from .pricing import PricingError, aggregate_hourly
from .scenarios import DUCK_UNITS
from .transcribe import TranscriptionError
from .trajectory import DomainError, Horizon, Mesh, Scheme, SchemaError
from .verify import (
    PerturbationSpec,
    Shape,
    VerificationError,
    cross_scheme_check,
    kkt_check,
    perturbation_check,
    refinement_study,
)

EXIT_OK = 0
EXIT_INGEST = 2
EXIT_SOLVE = 3
EXIT_VERIFY = 4


@dataclass
class RunConfig:
    subcommand: str
    scenario: Path | None = None
    scheme: Scheme = Scheme.PIECEWISE_LINEAR
    intervals: int = 100
    tol: float = 1e-8
    out: Path | None = None
    out_hourly: Path | None = None
    report: Path | None = None
    mode: str = "kkt"
    epsilon: float = 1e-3
    eta: Path | None = None
    counts: tuple[int, ...] = (50, 100, 200, 400)
    duck: DuckParams = field(default_factory=DuckParams)
    samples: int = 288

    def __post_init__(self):
        if self.subcommand not in ("solve", "verify", "duckgen"):
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        if self.intervals < 2:
            raise ValueError("intervals must be >= 2")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.mode not in ("kkt", "theorem1", "refine", "cross"):
            raise ValueError(f"unknown verify mode {self.mode!r}")


def fmt(v) -> str:
    v = float(v)
    if v == 0.0:
        return "0"
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _write_text(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def trajectory_csv(res) -> str:
    """Node table: time, load, price and per-unit dispatch and multipliers."""
    m = res.multipliers
    t = res.times
    y = res.dmap.load(t)
    cols = [("t", t), ("y", y), ("lambda", m.lambda_)]
    for u in res.scenario.units:
        cols.append((f"x_{u.id}", res.schedule.x[u.id](t)))
        for name in ("mu_hi", "mu_lo", "gamma_hi", "gamma_lo"):
            cols.append((f"{name}_{u.id}", m.node_values(u.id, name)))
        cols.append((f"beta_{u.id}", m.node_values(u.id, "beta_hi")))
    buf = io.StringIO()
    buf.write(",".join(name for name, _ in cols) + "\n")
    for i in range(t.size):
        buf.write(",".join(fmt(v[i]) for _, v in cols) + "\n")
    return buf.getvalue()


def hourly_csv(res) -> str:
    agg = aggregate_hourly(res.schedule, include_slack=True)
    names = list(agg)
    hz = res.scenario.horizon
    buf = io.StringIO()
    buf.write("hour," + ",".join(f"x_{k}" for k in names) + ",total\n")
    for h in range(len(agg[names[0]])):
        vals = [agg[k][h] for k in names]
        buf.write(",".join([fmt(hz.t1 + h)] + [fmt(v) for v in vals] + [fmt(math.fsum(vals))]) + "\n")
    return buf.getvalue()


def _read_scenario(cfg: RunConfig):
    if cfg.scenario is None:
        raise IngestionError("--scenario is required")
    try:
        raw = Path(cfg.scenario).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read scenario: {exc}") from exc
    return load_scenario(raw, cfg.scheme)


def _read_eta(path: Path):
    """Perturbation shape from JSON ``{"times": [...], "values": [...]}``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        t = np.asarray(data["times"], dtype=float)
        v = np.asarray(data["values"], dtype=float)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IngestionError(f"eta: {exc}") from exc
    if t.size != v.size or t.size < 2:
        raise IngestionError(f"eta.values has {v.size} samples but eta.times has {t.size}")
    return lambda s: np.interp(s, t, v)


def run_solve(cfg: RunConfig) -> int:
    s = _read_scenario(cfg)
    try:
        res = dispatch(s, cfg.scheme, cfg.intervals, tol=cfg.tol)
    except (SolveError, TranscriptionError) as exc:
        tail = "" if s.slack.enabled else " (slack unit disabled)"
        print(f"error: {exc}{tail}", file=sys.stderr)
        return EXIT_SOLVE
    _write_text(cfg.out, trajectory_csv(res))
    report_path = cfg.report
    if report_path is None and cfg.out is not None:
        report_path = Path(cfg.out).with_suffix(".json")
    report = res.report().to_dict()
    report["objective"] = res.schedule.objective
    report["scheme"] = res.scheme.value
    report["intervals"] = cfg.intervals
    if report_path is not None:
        _write_text(report_path, _dump_json(report))
    length = s.horizon.length
    if abs(length - round(length)) <= 1e-9:
        hourly = cfg.out_hourly
        if hourly is None and cfg.out is not None:
            hourly = Path(cfg.out).with_name(Path(cfg.out).stem + "_hourly.csv")
        if hourly is not None:
            _write_text(hourly, hourly_csv(res))
    return EXIT_OK


def run_verify(cfg: RunConfig) -> int:
    s = _read_scenario(cfg)
    try:
        if cfg.mode == "kkt":
            rep = kkt_check(s, cfg.scheme, cfg.intervals, tol=min(cfg.tol, 1e-10))
        elif cfg.mode == "theorem1":
            if cfg.eta is not None:
                spec = PerturbationSpec(cfg.epsilon, Shape.CUSTOM, eta=_read_eta(cfg.eta))
            else:
                spec = PerturbationSpec(cfg.epsilon)
            rep = perturbation_check(s, spec, cfg.scheme, cfg.intervals, tol=min(cfg.tol, 1e-10))
        elif cfg.mode == "refine":
            rep = refinement_study(s, cfg.counts, cfg.scheme, tol=min(cfg.tol, 1e-10))
        else:
            rep = cross_scheme_check(s, cfg.intervals, tol=min(cfg.tol, 1e-10))
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (SolveError, TranscriptionError, PricingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    _write_text(cfg.out, _dump_json(rep.to_dict()))
    if not rep.passed:
        print(f"verification failed: mode {cfg.mode}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def run_duckgen(cfg: RunConfig) -> int:
    p = cfg.duck
    hz = Horizon(0.0, 24.0)
    mesh = Mesh.uniform(hz, cfg.samples)
    values = duck_value(p, mesh.knots)
    if np.min(values) <= 0:
        raise IngestionError("duck parameters give a non-positive load")
    data = {
        "horizon": {"t1": hz.t1, "t2": hz.t2},
        "load": {"kind": "samples", "times": mesh.knots.tolist(), "values": values.tolist()},
        "units": _default_units(),
        "slack": {"enabled": True, "price": Slack().price},
    }
    _write_text(cfg.out, _dump_json(data))
    return EXIT_OK


def _default_units() -> list[dict]:
    s = function_scenario(Horizon(0.0, 24.0), lambda t: 1.0 + 0.0 * t, DUCK_UNITS)
    return scenario_to_dict(s)["units"]


def run(cfg: RunConfig) -> int:
    try:
        if cfg.subcommand == "solve":
            return run_solve(cfg)
        if cfg.subcommand == "verify":
            return run_verify(cfg)
        return run_duckgen(cfg)
    except (IngestionError, SchemaError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctdispatch", description="Continuous-time economic dispatch and pricing.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--scenario", type=Path, help="scenario JSON file")
        p.add_argument("--scheme", default="uniform", choices=["uniform", "spline"])
        p.add_argument("--intervals", type=int, default=100)
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--out", type=Path, help="output file (stdout if omitted)")

    p = sub.add_parser("solve", help="solve and write the trajectory CSV and price report JSON")
    common(p)
    p.add_argument("--out-hourly", type=Path, help="hourly energy CSV")
    p.add_argument("--report", type=Path, help="price report JSON (default: --out with .json suffix)")

    p = sub.add_parser("verify", help="run a verification check and write its JSON report")
    common(p)
    p.add_argument("--mode", default="kkt", choices=["kkt", "theorem1", "refine", "cross"])
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--eta", type=Path, help='perturbation shape JSON {"times": [...], "values": [...]}')
    p.add_argument("--counts", default="50,100,200,400", help="interval counts for --mode refine")

    p = sub.add_parser("duckgen", help="write a duck-curve scenario JSON")
    p.add_argument("--out", type=Path)
    p.add_argument("--samples", type=int, default=288, help="intervals over the day")
    for f in fields(DuckParams):
        p.add_argument("--" + f.name.replace("_", "-"), type=float, default=f.default, dest=f.name)
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    kw = {"subcommand": ns.subcommand}
    if ns.subcommand == "duckgen":
        kw["duck"] = DuckParams(**{f.name: getattr(ns, f.name) for f in fields(DuckParams)})
        kw["out"] = ns.out
        kw["samples"] = ns.samples
        return RunConfig(**kw)
    kw.update(
        scenario=ns.scenario,
        scheme=Scheme.parse(ns.scheme),
        intervals=ns.intervals,
        tol=ns.tol,
        out=ns.out,
    )
    if ns.subcommand == "solve":
        kw.update(out_hourly=ns.out_hourly, report=ns.report)
    else:
        try:
            counts = tuple(int(c) for c in ns.counts.split(","))
        except ValueError as exc:
            raise ValueError(f"--counts: {exc}") from exc
        kw.update(mode=ns.mode, epsilon=ns.epsilon, eta=ns.eta, counts=counts)
    return RunConfig(**kw)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
