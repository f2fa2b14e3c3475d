"""Contact traces: parsing, preprocessing and meeting statistics.

A trace is a time-ordered list of instantaneous, symmetric meetings between
integer node IDs. The canonical on-disk form is a line-based CSV::

    # comment
    n=39,duration=420000
    0,1,2
    100,1,2

Every transformation here is pure and returns a new :class:`ContactTrace`.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

log = logging.getLogger(__name__)


class TraceError(ValueError):
    """Raised for malformed or inconsistent trace input."""


class MeetingEvent(NamedTuple):
    time: int
    a: int
    b: int


@dataclass(frozen=True)
class ContactTrace:
    n: int
    events: tuple[MeetingEvent, ...]
    duration: int

    def __post_init__(self) -> None:
        prev = None
        for ev in self.events:
            if ev.a >= ev.b:
                raise TraceError(f"event {ev} is not in canonical a<b orientation")
            if ev.b >= self.n:
                raise TraceError(f"event {ev} references node >= n={self.n}")
            if ev.time < 0:
                raise TraceError(f"event {ev} has negative time")
            if prev is not None and ev < prev:
                raise TraceError("events are not sorted")
            prev = ev
        if self.events and self.duration < self.events[-1].time:
            raise TraceError(
                f"duration {self.duration} < last event time {self.events[-1].time}"
            )


@dataclass(frozen=True)
class MeetingStats:
    counts: dict[int, int]
    isolated: tuple[int, ...] = field(default=())

    def ranked(self) -> list[tuple[int, int]]:
        """(node, count) pairs from least to most active, ties by node ID."""
        return sorted(self.counts.items(), key=lambda kv: (kv[1], kv[0]))


def canonical(time: int, a: int, b: int) -> MeetingEvent:
    if a == b:
        raise TraceError(f"self-meeting of node {a} at t={time}")
    if time < 0:
        raise TraceError(f"negative time {time}")
    return MeetingEvent(time, a, b) if a < b else MeetingEvent(time, b, a)


def make_trace(
    events: Iterable[tuple[int, int, int]],
    n: int | None = None,
    duration: int | None = None,
) -> ContactTrace:
    """Build a trace from raw ``(time, a, b)`` triples.

    Orientation is canonicalized, duplicates collapse, and ``n`` /
    ``duration`` are inferred (max ID + 1, last event time) when omitted.
    """
    evs = sorted({canonical(int(t), int(a), int(b)) for t, a, b in events})
    if n is None:
        n = max((e.b for e in evs), default=-1) + 1
    if duration is None:
        duration = evs[-1].time if evs else 0
    return ContactTrace(n=n, events=tuple(evs), duration=duration)


def _parse_header(line: str, lineno: int) -> dict[str, int]:
    out = {}
    for part in line.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in ("n", "duration"):
            raise TraceError(f"line {lineno}: bad header field {part!r}")
        try:
            out[key] = int(value)
        except ValueError:
            raise TraceError(f"line {lineno}: bad header value {value!r}") from None
    return out


def parse_contact_trace(stream: TextIO | str) -> ContactTrace:
    """Parse the canonical ``time,a,b`` CSV format.

    Accepts LF or CRLF endings, ``#`` comment lines and an optional
    ``n=<count>,duration=<seconds>`` header.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    header: dict[str, int] = {}
    raw: list[MeetingEvent] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            if raw or header:
                raise TraceError(f"line {lineno}: header must precede events")
            header = _parse_header(line, lineno)
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise TraceError(f"line {lineno}: expected 'time,a,b', got {line!r}")
        try:
            t, a, b = (int(f) for f in fields)
        except ValueError:
            raise TraceError(f"line {lineno}: non-integer field in {line!r}") from None
        try:
            raw.append(canonical(t, a, b))
        except TraceError as exc:
            raise TraceError(f"line {lineno}: {exc}") from None
    if not raw:
        raise TraceError("no events")
    try:
        return make_trace(raw, n=header.get("n"), duration=header.get("duration"))
    except TraceError as exc:
        raise TraceError(f"inconsistent header: {exc}") from None


def load_trace(path: str | Path) -> ContactTrace:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_contact_trace(fh)


def serialize(trace: ContactTrace) -> str:
    lines = [f"n={trace.n},duration={trace.duration}"]
    lines.extend(f"{e.time},{e.a},{e.b}" for e in trace.events)
    return "\n".join(lines) + "\n"


def save_trace(
    trace: ContactTrace, path: str | Path, relabel_map: dict[int, int] | None = None
) -> Path:
    """Write the CSV and its JSON sidecar (same stem, ``.json``)."""
    path = Path(path)
    path.write_text(serialize(trace), encoding="utf-8")
    sidecar = path.with_suffix(".json")
    meta = {
        "n": trace.n,
        "duration": trace.duration,
        "relabel_map": {str(k): v for k, v in sorted((relabel_map or {}).items())},
    }
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_relabel_map(path: str | Path) -> dict[int, int]:
    """Original-ID -> dense-ID map from a trace sidecar (empty if absent)."""
    sidecar = Path(path).with_suffix(".json")
    if not sidecar.exists():
        return {}
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    return {int(k): int(v) for k, v in meta.get("relabel_map", {}).items()}


def filter_window(trace: ContactTrace, t_min: int, t_max: int) -> ContactTrace:
    """Keep events with ``t_min <= time <= t_max`` and shift them to start at 0."""
    if t_min >= t_max:
        raise TraceError(f"empty window [{t_min}, {t_max}]")
    kept = tuple(
        MeetingEvent(e.time - t_min, e.a, e.b)
        for e in trace.events
        if t_min <= e.time <= t_max
    )
    if not kept:
        log.warning("window [%d, %d] contains no events", t_min, t_max)
    return ContactTrace(n=trace.n, events=kept, duration=t_max - t_min)


def keep_id_range(trace: ContactTrace, lo: int, hi: int) -> tuple[ContactTrace, dict[int, int]]:
    """Drop every node outside ``[lo, hi]`` (e.g. devices external to an experiment)."""
    outside = {i for i in range(trace.n) if not lo <= i <= hi}
    return remove_nodes(trace, outside)


def remove_nodes(trace: ContactTrace, ids: Iterable[int]) -> tuple[ContactTrace, dict[int, int]]:
    """Drop events touching ``ids`` and relabel survivors densely.

    Survivors keep their relative order. Returns the trace and the
    old-ID -> new-ID map for surviving nodes.
    """
    removed = set(ids)
    survivors = [i for i in range(trace.n) if i not in removed]
    relabel = {old: new for new, old in enumerate(survivors)}
    events = tuple(
        MeetingEvent(e.time, relabel[e.a], relabel[e.b])
        for e in trace.events
        if e.a not in removed and e.b not in removed
    )
    return ContactTrace(n=len(survivors), events=events, duration=trace.duration), relabel


def drop_inactive(trace: ContactTrace) -> tuple[ContactTrace, dict[int, int]]:
    """Remove nodes that take part in no meeting."""
    counts = meeting_counts(trace).counts
    return remove_nodes(trace, [i for i, c in counts.items() if c == 0])


def compose_relabel(first: dict[int, int], second: dict[int, int]) -> dict[int, int]:
    return {old: second[mid] for old, mid in first.items() if mid in second}


def repeat_trace(trace: ContactTrace, k: int) -> ContactTrace:
    """Concatenate ``k`` copies, copy ``i`` shifted by ``i * duration``."""
    if k < 1:
        raise TraceError(f"repeat count must be >= 1, got {k}")
    d = trace.duration
    events = tuple(
        MeetingEvent(e.time + i * d, e.a, e.b) for i in range(k) for e in trace.events
    )
    # copies abut at multiples of d; re-sort only if an event sits exactly on 0 and d
    if k > 1 and trace.events and trace.events[0].time == 0 and trace.events[-1].time == d:
        events = tuple(sorted(events))
    return ContactTrace(n=trace.n, events=events, duration=k * d)


def meeting_counts(trace: ContactTrace, quantile: float | None = None) -> MeetingStats:
    """Per-node meeting counts.

    With ``quantile`` in [0, 1], nodes whose count is at or below the
    nearest-rank quantile of all counts are reported as isolated.
    """
    counts = dict.fromkeys(range(trace.n), 0)
    for e in trace.events:
        counts[e.a] += 1
        counts[e.b] += 1
    isolated: tuple[int, ...] = ()
    if quantile is not None and counts:
        if not 0.0 <= quantile <= 1.0:
            raise ValueError(f"quantile must be in [0, 1], got {quantile}")
        ordered = sorted(counts.values())
        rank = max(0, math.ceil(quantile * len(ordered)) - 1)
        threshold = ordered[rank]
        isolated = tuple(sorted(i for i, c in counts.items() if c <= threshold))
    return MeetingStats(counts=counts, isolated=isolated)


def stats_csv(stats: MeetingStats, labels: dict[int, int] | None = None) -> str:
    """``node_id,meeting_count`` rows; ``labels`` maps dense IDs back to original ones."""
    rows = ["node_id,meeting_count"]
    for node, count in sorted(stats.counts.items()):
        rows.append(f"{labels.get(node, node) if labels else node},{count}")
    return "\n".join(rows) + "\n"
