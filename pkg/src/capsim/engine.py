"""Deterministic discrete-event replay of a contact trace.

Meetings stream straight from the trace; everything else (captures, claims,
flood deliveries, time-outs, alarm resolutions) lives in a heap keyed by
``(time, rank, k1, k2, seq)``. Equal-time events dispatch by rank::

    capture < meeting < periodic claim < flood < time-out < resolution

Time-outs are keyed by ``(owner, subject)`` so their order never depends on
when they were armed. Re-arming a timer to a later deadline does not touch
the heap; the old entry pops, the protocol reports the new deadline, and
the engine re-schedules it (lazy deletion, no decrease-key).
"""

from __future__ import annotations

import copy
import heapq
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

from . import protocols as P
from .protocols import Kind, ProtocolConfig
from .trace import ContactTrace

CAPTURE, MEETING, CLAIM, FLOOD, TIMER, RESOLVE = range(6)

MESSAGE_CLASSES = ("alarm", "claim", "exchange", "cooperation")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CaptureScenario:
    victim: int
    capture_time: int


@dataclass
class MessageLedger:
    sent: list[int]
    received: list[int]
    by_class: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MESSAGE_CLASSES, 0))

    @classmethod
    def empty(cls, n: int) -> MessageLedger:
        return cls([0] * n, [0] * n)

    @property
    def total_sent(self) -> int:
        return sum(self.sent)

    @property
    def total_received(self) -> int:
        return sum(self.received)


@dataclass
class AlarmRecord:
    time: int
    watcher: int
    subject: int
    answered: bool = False


@dataclass
class SimulationResult:
    n: int
    duration: int
    measure_from: int
    detection_time: int | None
    alarm_time: int | None
    revocation_time: int | None
    false_negative: bool
    false_positive_count: int
    ledger: MessageLedger
    alarm_log: list[AlarmRecord]

    def msgs_per_node_per_hour(self) -> float:
        hours = (self.duration - self.measure_from) / 3600
        if hours <= 0:
            return 0.0
        return self.ledger.total_sent / self.n / hours

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> SimulationResult:
        d = dict(d)
        d["ledger"] = MessageLedger(**d["ledger"])
        d["alarm_log"] = [AlarmRecord(**r) for r in d["alarm_log"]]
        return cls(**d)


class Simulation:
    """One protocol run over one trace, with at most one capture.

    ``run()`` replays to the end of the trace. ``advance(t)`` stops before
    time ``t`` so the state can be :meth:`fork`-ed and captures injected at
    ``t``; a fork produces the same result as a fresh run with that capture.
    ``on_step`` (if given) is called with the simulation after every
    dispatched event.
    """

    def __init__(
        self,
        trace: ContactTrace,
        cfg: ProtocolConfig,
        scenario: CaptureScenario | None = None,
        measure_from: int = 0,
        on_step: Callable[[Simulation], None] | None = None,
        fast_benchmark: bool = True,
    ) -> None:
        n = trace.n
        if n < 1:
            raise SimulationError("trace has no nodes")
        cfg.validate(n)
        self.trace = trace
        self.cfg = cfg
        self.n = n
        self.measure_from = measure_from
        self.on_step = on_step
        self.now = 0
        self.alive = [True] * n
        self.states = [P.initial_state(i, n, cfg) for i in range(n)]
        self.ledger = MessageLedger.empty(n)
        self._floods = 0
        self._floods_at_death: dict[int, int] = {}
        self._alive_count = n
        # floods reach every live node at the same instant, so these views
        # are identical across nodes and can be shared
        self._heard: set[int] = set()
        self._revoked_view: set[int] = set()
        self.alarms: list[AlarmRecord] = []
        self._unanswered: dict[int, list[AlarmRecord]] = {}
        self.revoked: dict[int, int] = {}
        self.scenario: CaptureScenario | None = None
        self.detection_time: int | None = None
        self.alarm_time: int | None = None
        self.false_positives = 0
        self._heap: list[tuple] = []
        self._sched: dict[tuple[int, int], int] = {}
        self._seq = 0
        self._mi = 0
        self._done = False
        if cfg.kind is Kind.ADABO and cfg.admin_setup_slot:
            assign = cfg.assignment(n)
            self._admin_watcher = {s: w for w, s in enumerate(assign)}
        else:
            self._admin_watcher = {}
        for st in self.states:
            st.heard_alarms = self._heard
            st.revoked = self._revoked_view
        # Under all-to-all benchmark tracking with instant floods, every live
        # node holds the same claim times, so only the lowest-ID live watcher
        # of a subject can ever raise its alarm; the rest are suppressed by
        # that alarm. Arming only its timer gives identical results.
        # The claim times themselves are then one shared table.
        self.shared_timers = fast_benchmark and (
            cfg.kind is Kind.BENCHMARK and cfg.benchmark_tracked == 0 and cfg.sigma == 0 and n > 1
        )
        if self.shared_timers:
            table = dict.fromkeys(range(n), 0)
            for st in self.states:
                st.tracked = table
        for i, st in enumerate(self.states):
            self._apply(i, P.initial_actions(st, cfg))
        if cfg.kind is Kind.BENCHMARK:
            for i in range(n):
                self._push(P.benchmark_claim_phase(i, n, cfg), CLAIM, i, 0, None)
        if scenario is not None:
            self.inject_capture(scenario)

    # -- scheduling --------------------------------------------------------

    def _push(self, time: int, rank: int, k1: int, k2: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, rank, k1, k2, self._seq, payload))

    def _representative(self, subject: int) -> int | None:
        for i, up in enumerate(self.alive):
            if up and i != subject:
                return i
        return None

    def _arm(self, owner: int, subject: int, deadline: int) -> None:
        if deadline > self.trace.duration:
            return
        if self.shared_timers and owner != (1 if subject == 0 else 0):
            if owner != self._representative(subject):
                return
        key = (owner, subject)
        cur = self._sched.get(key)
        if cur is None or deadline < cur:
            self._sched[key] = deadline
            self._push(deadline, TIMER, owner, subject, None)

    def inject_capture(self, scenario: CaptureScenario) -> None:
        if self.scenario is not None:
            raise SimulationError("only one capture per run")
        if not 0 <= scenario.victim < self.n:
            raise SimulationError(f"victim {scenario.victim} not in [0, {self.n})")
        if not 0 <= scenario.capture_time <= self.trace.duration:
            raise SimulationError("capture time outside the trace")
        if scenario.capture_time < self.now:
            raise SimulationError("capture time already passed")
        self.scenario = scenario
        self._push(scenario.capture_time, CAPTURE, scenario.victim, 0, None)

    def fork(self) -> Simulation:
        memo = {id(self.trace): self.trace, id(self.cfg): self.cfg}
        return copy.deepcopy(self, memo)

    # -- accounting --------------------------------------------------------

    def _charge_flood(self, cls: str) -> None:
        # every live node relays and receives once; per-node totals are
        # materialized from the flood counter in ledger()
        if self.now < self.measure_from:
            return
        self._floods += 1
        self.ledger.by_class[cls] += self._alive_count

    def _charge_unicast(self, src: int, dst: int, cls: str) -> None:
        if self.now < self.measure_from:
            return
        self.ledger.sent[src] += 1
        self.ledger.received[dst] += 1
        self.ledger.by_class[cls] += 1

    # -- action execution --------------------------------------------------

    def _apply(self, owner: int, actions) -> None:
        for act in actions:
            if type(act) is P.StartTimer:
                self._arm(owner, act.subject, act.deadline)
            elif type(act) is P.FloodAlarm:
                self._emit_alarm(owner, act.subject)
            elif type(act) is P.FloodPresenceClaim:
                self._emit_flood("claim", act.subject, owner)
            elif type(act) is P.UnicastCooperationRequest:
                self._cooperate(owner, act.peer, act.subject)
            elif type(act) is P.SelfTokenPassed:
                w = self._admin_watcher.get(act.node)
                if w is not None:
                    P.release_admin_slot(self.states[w], act.node)
            elif isinstance(act, (P.ProposeExchange, P.AcceptExchange, P.RejectExchange)):
                self._charge_unicast(act.sender, act.peer, "exchange")
            else:
                raise SimulationError(f"unhandled action {act!r}")

    def _emit_flood(self, kind: str, subject: int, origin: int) -> None:
        if not self.alive[origin]:
            return
        self._charge_flood(kind)
        self._push(self.now + self.cfg.sigma, FLOOD, 0, 0, (kind, subject, origin))

    def _emit_alarm(self, watcher: int, subject: int) -> None:
        if not self.alive[watcher]:
            return
        rec = AlarmRecord(self.now, watcher, subject)
        self.alarms.append(rec)
        self._unanswered.setdefault(subject, []).append(rec)
        self._emit_flood("alarm", subject, watcher)
        self._push(self.now + self.cfg.delta, RESOLVE, subject, 0, rec)

    def _cooperate(self, asker: int, peer: int, subject: int) -> None:
        now, cfg = self.now, self.cfg
        self._charge_unicast(asker, peer, "cooperation")
        seen = P.cooperation_reply(self.states[peer], subject, now)
        self._charge_unicast(peer, asker, "cooperation")
        self._apply(asker, P.on_cooperation_reply(self.states[asker], subject, seen, now, cfg))

    # -- dispatch ----------------------------------------------------------

    def _meeting(self, a: int, b: int) -> None:
        alive = self.alive
        if not (alive[a] and alive[b]) or a in self.revoked or b in self.revoked:
            return
        now, cfg, states = self.now, self.cfg, self.states
        sa, sb = states[a], states[b]
        kind = cfg.kind
        if kind is Kind.BENCHMARK:
            return
        self._apply(a, P.on_meeting(sa, b, now, cfg))
        self._apply(b, P.on_meeting(sb, a, now, cfg))
        if cfg.base_cooperation and kind in (Kind.BASE, Kind.BOOKING, Kind.ADAPTIVE):
            info_b = P.shared_tracking_info(sb, sa)
            info_a = P.shared_tracking_info(sa, sb)
            self._apply(a, P.base_cooperation_merge(sa, info_b, cfg))
            self._apply(b, P.base_cooperation_merge(sb, info_a, cfg))
        if kind is Kind.ADABO:
            for owner, act in P.meeting_exchange(sa, sb, now, cfg):
                self._apply(owner, (act,))

    def _flood(self, kind: str, subject: int) -> None:
        now, cfg, states, alive = self.now, self.cfg, self.states, self.alive
        if kind == "alarm":
            # bystanders only record the alarm in the shared view
            self._heard.add(subject)
            if alive[subject]:
                self._apply(subject, P.on_flood_received(states[subject], kind, subject, now, cfg))
            return
        for rec in self._unanswered.pop(subject, ()):
            rec.answered = True
        self._heard.discard(subject)
        if self.shared_timers:
            rep = self._representative(subject)
            if rep is not None:
                self._apply(rep, P.on_flood_received(states[rep], kind, subject, now, cfg))
            return
        for i, st in enumerate(states):
            if alive[i] and (subject in st.tracked or subject in st.raised):
                self._apply(i, P.on_flood_received(st, kind, subject, now, cfg))

    def _resolve(self, rec: AlarmRecord) -> None:
        s = rec.subject
        if rec.answered or s in self.revoked:
            return
        self.revoked[s] = self.now
        if self.alive[s]:
            self.false_positives += 1
        sc = self.scenario
        if sc is not None and s == sc.victim and self.detection_time is None:
            self.alarm_time = rec.time
            self.detection_time = rec.time - sc.capture_time
        now, cfg = self.now, self.cfg
        for i, st in enumerate(self.states):
            if self.alive[i]:
                self._apply(i, P.on_flood_received(st, "revocation", s, now, cfg))

    def _dispatch(self, ev: tuple) -> None:
        time, rank, k1, k2, _, payload = ev
        if rank == TIMER:
            key = (k1, k2)
            if self._sched.get(key) != time:
                return
            del self._sched[key]
            if self.alive[k1]:
                self._apply(k1, P.on_timer_expiry(self.states[k1], k2, time, self.cfg))
        elif rank == FLOOD:
            self._flood(payload[0], payload[1])
        elif rank == RESOLVE:
            self._resolve(payload)
        elif rank == CLAIM:
            if self.alive[k1]:
                self._emit_flood("claim", k1, k1)
                self._push(time + self.cfg.tau, CLAIM, k1, 0, None)
        elif rank == CAPTURE:
            was = {s: self._representative(s) for s in range(self.n)} if self.shared_timers else {}
            if self.alive[k1]:
                self._floods_at_death[k1] = self._floods
                self._alive_count -= 1
            self.alive[k1] = False
            for s, rep in was.items():
                new = self._representative(s)
                if rep == k1 and new is not None:
                    d = self.states[new].deadline(s, self.cfg)
                    if d is not None and d >= time:
                        self._arm(new, s, d)

    def advance(self, until: int | None = None) -> None:
        """Process every event strictly before ``until`` (all, if None)."""
        events = self.trace.events
        n_events = len(events)
        heap = self._heap
        end = self.trace.duration
        limit = end + 1 if until is None else min(until, end + 1)
        on_step = self.on_step
        mi = self._mi
        while True:
            mt = events[mi].time if mi < n_events else None
            if heap and (mt is None or (heap[0][0], heap[0][1]) < (mt, MEETING)):
                if heap[0][0] >= limit:
                    break
                ev = heapq.heappop(heap)
                self.now = ev[0]
                self._dispatch(ev)
            elif mt is not None and mt < limit:
                e = events[mi]
                mi += 1
                self._mi = mi
                self.now = mt
                self._meeting(e.a, e.b)
            else:
                break
            if on_step is not None:
                on_step(self)
        self._mi = mi

    def run(self) -> SimulationResult:
        if not self._done:
            self.advance(None)
            self._done = True
        sc = self.scenario
        revoked_at = self.revoked.get(sc.victim) if sc is not None else None
        return SimulationResult(
            n=self.n,
            duration=self.trace.duration,
            measure_from=self.measure_from,
            detection_time=self.detection_time,
            alarm_time=self.alarm_time,
            revocation_time=revoked_at,
            false_negative=sc is not None and revoked_at is None,
            false_positive_count=self.false_positives,
            ledger=self.ledger_snapshot(),
            alarm_log=copy.deepcopy(self.alarms),
        )

    def ledger_snapshot(self) -> MessageLedger:
        led = copy.deepcopy(self.ledger)
        for i in range(self.n):
            floods = self._floods_at_death.get(i, self._floods)
            led.sent[i] += floods
            led.received[i] += floods
        return led

    def booking_tokens(self) -> list[int | None]:
        return [st.booking_token for st in self.states]


def run_simulation(
    trace: ContactTrace,
    cfg: ProtocolConfig,
    scenario: CaptureScenario | None = None,
    measure_from: int = 0,
    on_step: Callable[[Simulation], None] | None = None,
) -> SimulationResult:
    return Simulation(trace, cfg, scenario, measure_from, on_step).run()
