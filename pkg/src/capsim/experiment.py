"""Capture-grid campaigns: many single-capture runs, aggregated per (protocol, lambda).

For each (protocol, lambda) pair one capture-free baseline is replayed up to
each grid instant and forked there; every victim's run continues from the
fork. The prefix before a capture is identical for all victims, so this
gives the same per-run results as independent runs at a fraction of the cost.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from statistics import fmean
from typing import Sequence

from . import __version__
from .engine import CaptureScenario, Simulation, SimulationResult, run_simulation
from .protocols import Kind, ProtocolConfig
from .trace import ContactTrace

log = logging.getLogger(__name__)

AGGREGATE_COLUMNS = (
    "protocol",
    "lambda",
    "mean_detection_s",
    "msgs_per_node_per_hour",
    "fn_rate",
    "runs",
)


class CampaignError(ValueError):
    pass


def build_capture_grid(n: int, start: int, step: int, intervals: int, duration: int | None = None):
    """Every node captured at the start of every interval, ordered by (interval, victim)."""
    if intervals < 1:
        raise CampaignError("intervals must be >= 1")
    if n < 1:
        raise CampaignError("n must be >= 1")
    last = start + (intervals - 1) * step
    if duration is not None and last > duration:
        raise CampaignError(f"last capture at {last} s exceeds trace duration {duration} s")
    return [
        CaptureScenario(victim=v, capture_time=start + i * step)
        for i in range(intervals)
        for v in range(n)
    ]


@dataclass(frozen=True)
class CampaignSpec:
    trace: str
    protocols: tuple[str, ...] = tuple(k.value for k in Kind)
    lambdas: tuple[int, ...] = (12600, 14400, 16200, 18000, 19800, 23400)
    grid_start: int = 100000
    grid_step: int = 21600
    grid_intervals: int = 13
    measure_from: int = 84000
    workers: int = 0
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def config_for(self, kind: str, lam: int) -> ProtocolConfig:
        # the benchmark's only cadence is tau, so the lambda sweep drives it
        return self.protocol.with_(kind=Kind(kind), lam=lam, tau=lam)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protocol"]["kind"] = self.protocol.kind.value
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class RunRow:
    protocol: str
    lam: int
    victim: int
    capture_time: int
    detection_time: int | None
    false_negative: bool
    false_positives: int
    total_sent: int
    msgs_per_node_per_hour: float
    error: str | None = None


@dataclass(frozen=True)
class AggregateRow:
    protocol: str
    lam: int
    mean_detection_s: float | None
    msgs_per_node_per_hour: float
    fn_rate: float
    runs: int
    false_positives: int
    failures: int


@dataclass
class CampaignResult:
    aggregates: list[AggregateRow]
    runs: list[RunRow]

    def aggregate(self, protocol: str, lam: int) -> AggregateRow:
        for row in self.aggregates:
            if row.protocol == protocol and row.lam == lam:
                return row
        raise KeyError((protocol, lam))

    def to_dict(self) -> dict:
        return {
            "aggregates": [asdict(r) for r in self.aggregates],
            "runs": [asdict(r) for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> CampaignResult:
        return cls(
            aggregates=[AggregateRow(**r) for r in d["aggregates"]],
            runs=[RunRow(**r) for r in d["runs"]],
        )


def _row(kind: str, lam: int, sc: CaptureScenario, res: SimulationResult) -> RunRow:
    return RunRow(
        protocol=kind,
        lam=lam,
        victim=sc.victim,
        capture_time=sc.capture_time,
        detection_time=res.detection_time,
        false_negative=res.false_negative,
        false_positives=res.false_positive_count,
        total_sent=res.ledger.total_sent,
        msgs_per_node_per_hour=res.msgs_per_node_per_hour(),
    )


def _failed(kind: str, lam: int, sc: CaptureScenario, exc: BaseException) -> RunRow:
    log.error("run %s lambda=%d victim=%d t=%d failed: %s", kind, lam, sc.victim, sc.capture_time, exc)
    return RunRow(kind, lam, sc.victim, sc.capture_time, None, False, 0, 0, 0.0, error=repr(exc))


def run_series(
    trace: ContactTrace,
    cfg: ProtocolConfig,
    scenarios: Sequence[CaptureScenario],
    measure_from: int,
    fork: bool = True,
) -> list[RunRow]:
    """All scenarios for one configuration, in the given order."""
    kind, lam = cfg.kind.value, cfg.lam
    if not fork:
        rows = []
        for sc in scenarios:
            try:
                rows.append(_row(kind, lam, sc, run_simulation(trace, cfg, sc, measure_from)))
            except Exception as exc:  # noqa: BLE001 - reported per run
                rows.append(_failed(kind, lam, sc, exc))
        return rows

    results: dict[int, RunRow] = {}
    try:
        base = Simulation(trace, cfg, None, measure_from)
    except Exception as exc:  # noqa: BLE001
        return [_failed(kind, lam, sc, exc) for sc in scenarios]
    for idx in sorted(range(len(scenarios)), key=lambda i: scenarios[i].capture_time):
        sc = scenarios[idx]
        try:
            base.advance(sc.capture_time)
            sim = base.fork()
            sim.inject_capture(sc)
            results[idx] = _row(kind, lam, sc, sim.run())
        except Exception as exc:  # noqa: BLE001
            results[idx] = _failed(kind, lam, sc, exc)
    return [results[i] for i in range(len(scenarios))]


def aggregate(kind: str, lam: int, rows: Sequence[RunRow]) -> AggregateRow:
    ok = [r for r in rows if r.error is None]
    detected = [r.detection_time for r in ok if r.detection_time is not None]
    return AggregateRow(
        protocol=kind,
        lam=lam,
        mean_detection_s=fmean(detected) if detected else None,
        msgs_per_node_per_hour=fmean(r.msgs_per_node_per_hour for r in ok) if ok else 0.0,
        fn_rate=sum(r.false_negative for r in ok) / len(ok) if ok else 0.0,
        runs=len(ok),
        false_positives=sum(r.false_positives for r in ok),
        failures=len(rows) - len(ok),
    )


def _series_job(args) -> list[RunRow]:
    trace, cfg, scenarios, measure_from = args
    return run_series(trace, cfg, scenarios, measure_from)


def default_workers() -> int:
    return os.cpu_count() or 1


def run_campaign(
    spec: CampaignSpec, trace: ContactTrace, workers: int | None = None
) -> CampaignResult:
    """Run every (protocol, lambda, scenario) triple; output order is fixed."""
    scenarios = build_capture_grid(
        trace.n, spec.grid_start, spec.grid_step, spec.grid_intervals, trace.duration
    )
    jobs = [
        (trace, spec.config_for(kind, lam), scenarios, spec.measure_from)
        for kind in spec.protocols
        for lam in spec.lambdas
    ]
    for _, cfg, _, _ in jobs:
        cfg.validate(trace.n)
    workers = workers or spec.workers or default_workers()
    if workers <= 1 or len(jobs) <= 1:
        outputs = []
        for job in jobs:
            log.info("running %s lambda=%d", job[1].kind.value, job[1].lam)
            outputs.append(_series_job(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_series_job, jobs))
    runs: list[RunRow] = []
    aggregates = []
    for (_, cfg, _, _), rows in zip(jobs, outputs):
        runs.extend(rows)
        aggregates.append(aggregate(cfg.kind.value, cfg.lam, rows))
    return CampaignResult(aggregates=aggregates, runs=runs)


# -- export --------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def aggregates_csv(result: CampaignResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for r in result.aggregates:
        w.writerow(
            [r.protocol, r.lam, _fmt(r.mean_detection_s), _fmt(r.msgs_per_node_per_hour), _fmt(r.fn_rate), r.runs]
        )
    return buf.getvalue()


def runs_csv(result: CampaignResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(RunRow)]
    w.writerow(names)
    for r in result.runs:
        row = asdict(r)
        row["msgs_per_node_per_hour"] = _fmt(row["msgs_per_node_per_hour"])
        w.writerow(["" if row[k] is None else row[k] for k in names])
    return buf.getvalue()


def plot_series(result: CampaignResult) -> dict[str, str]:
    """One ``x,y`` file body per protocol: mean detection time vs messages/node/hour."""
    out: dict[str, list[str]] = {}
    for r in result.aggregates:
        out.setdefault(r.protocol, ["lambda,mean_detection_s,msgs_per_node_per_hour"]).append(
            f"{r.lam},{_fmt(r.mean_detection_s)},{_fmt(r.msgs_per_node_per_hour)}"
        )
    return {k: "\n".join(v) + "\n" for k, v in out.items()}


def export(result: CampaignResult, outdir: str | Path, formats: Sequence[str] = ("csv", "json", "plot-data")) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            written.append(_write(outdir / "aggregates.csv", aggregates_csv(result)))
            written.append(_write(outdir / "runs.csv", runs_csv(result)))
        elif fmt == "json":
            body = json.dumps(result.to_dict(), indent=1, sort_keys=True) + "\n"
            written.append(_write(outdir / "result.json", body))
        elif fmt == "plot-data":
            for proto, body in plot_series(result).items():
                written.append(_write(outdir / f"series_{proto}.csv", body))
        else:
            raise CampaignError(f"unknown export format {fmt!r}")
    return written


def _write(path: Path, body: str) -> Path:
    path.write_text(body, encoding="utf-8")
    return path


def load_result(path: str | Path) -> CampaignResult:
    return CampaignResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_manifest(outdir: str | Path, spec: CampaignSpec, trace_path: str | Path) -> Path:
    trace_hash = hashlib.sha256(Path(trace_path).read_bytes()).hexdigest()
    manifest = {
        "spec_sha256": spec.digest(),
        "trace_sha256": trace_hash,
        "tool": "capsim",
        "version": __version__,
        "spec": spec.to_dict(),
    }
    return _write(Path(outdir) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
