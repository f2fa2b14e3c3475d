"""Per-node capture-detection state machines.

Five protocols share one event-driven surface: :func:`on_meeting`,
:func:`on_timer_expiry`, :func:`on_flood_received` plus the AdaBo token
exchange helpers. Handlers mutate a :class:`NodeProtocolState` in place and
return the actions the engine must execute and account for. Nothing here
knows about queues, message costs or who is captured.

Time is integer seconds. Scores are exact fractions; a subject absent from
the silent memory slots scores ``-inf``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple, Union

NEG_INF = float("-inf")


class Kind(str, enum.Enum):
    BENCHMARK = "benchmark"
    BASE = "base"
    BOOKING = "booking"
    ADAPTIVE = "adaptive"
    ADABO = "adabo"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol parameters. Symbols in brackets follow the usual notation table.

    ``booking_assignment`` is either the keyword ``"successor"``
    (i -> (i+1) mod n) or an explicit tuple indexed by watcher ID.
    """

    kind: Kind = Kind.BASE
    tau: int = 12600  # [tau] benchmark claim period
    lam: int = 12600  # [lambda] alarm time-out
    delta: int = 60  # [delta] time to prove presence after an alarm
    gamma: int = 3600  # [gamma] AdaBo cooperation window before a time-out
    sigma: int = 0  # [sigma] flood propagation delay
    k_tracked: int = 1  # [K] tracked slots (Base/Adaptive)
    sms_capacity: int = 5  # silent memory slots (Adaptive/AdaBo)
    sms_refresh_interval: int = 21600
    setup_duration: int = 42000  # AdaBo statistics-only start-up
    max_exchanges: int = 3
    base_cooperation: bool = False
    booking_assignment: Union[str, tuple[int, ...]] = "successor"
    admin_setup_slot: bool = True
    strict_cap: bool = False
    flip_exchange_rule: bool = False
    benchmark_stagger: bool = True
    benchmark_tracked: int = 0  # 0 = every node tracks every other

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        if isinstance(self.booking_assignment, list):
            object.__setattr__(self, "booking_assignment", tuple(self.booking_assignment))

    @property
    def timeout(self) -> int:
        return self.tau + self.sigma if self.kind is Kind.BENCHMARK else self.lam

    def with_(self, **changes) -> ProtocolConfig:
        return replace(self, **changes)

    def assignment(self, n: int) -> tuple[int, ...]:
        if self.booking_assignment == "successor":
            return tuple((i + 1) % n for i in range(n))
        if isinstance(self.booking_assignment, str):
            raise ConfigError(f"unknown booking assignment {self.booking_assignment!r}")
        return tuple(self.booking_assignment)

    def validate(self, n: int) -> None:
        if self.lam <= 0:
            raise ConfigError("lambda must be > 0")
        if self.kind is Kind.BENCHMARK and self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.delta < 0 or self.sigma < 0:
            raise ConfigError("delta and sigma must be >= 0")
        if self.delta < 2 * self.sigma:
            raise ConfigError("delta must cover alarm and claim propagation (delta >= 2*sigma)")
        if self.sms_capacity < 0 or self.max_exchanges < 0:
            raise ConfigError("sms_capacity and max_exchanges must be >= 0")
        if self.sms_refresh_interval <= 0:
            raise ConfigError("sms_refresh_interval must be > 0")
        if self.kind in (Kind.BASE, Kind.ADAPTIVE) and self.k_tracked < 1:
            raise ConfigError("k_tracked must be >= 1")
        if self.kind is Kind.ADABO and not 0 <= self.gamma < self.lam:
            raise ConfigError("gamma must satisfy 0 <= gamma < lambda")
        if self.kind is Kind.BOOKING or (self.kind is Kind.ADABO and self.admin_setup_slot):
            assign = self.assignment(n)
            if len(assign) != n or sorted(assign) != list(range(n)):
                raise ConfigError(f"booking assignment is not a permutation of range({n})")
            if any(w == s for w, s in enumerate(assign)):
                raise ConfigError("booking assignment has a fixed point")


class TrackedSlot(NamedTuple):
    subject: int
    last_seen: int
    timer_deadline: int


@dataclass(slots=True)
class SmsEntry:
    subject: int
    meeting_count: int
    window_start: int
    last_meeting: int

    def score(self, now: int) -> Fraction:
        elapsed = now - self.window_start
        if elapsed <= 0:
            return Fraction(0)
        return Fraction(self.meeting_count, elapsed)


@dataclass(slots=True)
class NodeProtocolState:
    self_id: int
    # subject -> last_seen; insertion order is tracking order
    tracked: dict[int, int] = field(default_factory=dict)
    sms: dict[int, SmsEntry] = field(default_factory=dict)
    booking_token: int | None = None
    admin_subject: int | None = None
    exchange_count: int = 0
    heard_alarms: set[int] = field(default_factory=set)
    raised: set[int] = field(default_factory=set)
    revoked: set[int] = field(default_factory=set)
    evict_epoch: int = 0

    def slots(self, cfg: ProtocolConfig) -> list[TrackedSlot]:
        to = cfg.timeout
        return [TrackedSlot(s, t, t + to) for s, t in self.tracked.items()]

    def deadline(self, subject: int, cfg: ProtocolConfig) -> int | None:
        t = self.tracked.get(subject)
        return None if t is None else t + cfg.timeout

    def score(self, subject: int | None, now: int) -> Fraction | float:
        entry = self.sms.get(subject) if subject is not None else None
        return NEG_INF if entry is None else entry.score(now)


# -- actions ------------------------------------------------------------------


class StartTimer(NamedTuple):
    subject: int
    deadline: int


class FloodAlarm(NamedTuple):
    subject: int


class FloodPresenceClaim(NamedTuple):
    subject: int


class UnicastCooperationRequest(NamedTuple):
    peer: int
    subject: int


class UnicastCooperationReply(NamedTuple):
    peer: int
    subject: int
    last_seen: int | None


class ProposeExchange(NamedTuple):
    sender: int
    peer: int
    offered_token: int
    requested_token: int


class AcceptExchange(NamedTuple):
    sender: int
    peer: int


class RejectExchange(NamedTuple):
    sender: int
    peer: int


class SelfTokenPassed(NamedTuple):
    node: int


class Revoke(NamedTuple):
    subject: int


ProtocolAction = Union[
    StartTimer,
    FloodAlarm,
    FloodPresenceClaim,
    UnicastCooperationRequest,
    UnicastCooperationReply,
    ProposeExchange,
    AcceptExchange,
    RejectExchange,
    SelfTokenPassed,
    Revoke,
]


# -- lifecycle ----------------------------------------------------------------


def initial_state(node: int, n: int, cfg: ProtocolConfig) -> NodeProtocolState:
    state = NodeProtocolState(self_id=node)
    kind = cfg.kind
    if kind is Kind.BENCHMARK:
        k = cfg.benchmark_tracked
        others = (
            [(node + j) % n for j in range(1, min(k, n - 1) + 1)]
            if k > 0
            else [i for i in range(n) if i != node]
        )
        state.tracked = dict.fromkeys(others, 0)
    elif kind is Kind.BOOKING:
        state.tracked = {cfg.assignment(n)[node]: 0}
    elif kind is Kind.ADABO:
        state.booking_token = node
        if cfg.admin_setup_slot:
            state.admin_subject = cfg.assignment(n)[node]
            state.tracked = {state.admin_subject: cfg.setup_duration}
    return state


def initial_actions(state: NodeProtocolState, cfg: ProtocolConfig) -> list[ProtocolAction]:
    """Timers running from protocol start (or AdaBo setup end)."""
    to = cfg.timeout
    return [StartTimer(s, t + to) for s, t in state.tracked.items()]


def benchmark_claim_phase(node: int, n: int, cfg: ProtocolConfig) -> int:
    """First claim instant of ``node``; later claims follow every ``tau``."""
    return (node * cfg.tau) // n if cfg.benchmark_stagger else 0


def benchmark_message_rate(t_u: int | Fraction, tau: int | Fraction, n: int) -> Fraction:
    """Messages each node sends (and receives) per ``t_u`` under periodic claims."""
    if tau == 0:
        raise ValueError("tau must be non-zero")
    if tau < 0 or n < 1:
        raise ValueError("tau must be > 0 and n >= 1")
    return Fraction(t_u) / Fraction(tau) * n


# -- silent memory slots ------------------------------------------------------


def _sms_observe(state: NodeProtocolState, peer: int, now: int, cfg: ProtocolConfig) -> None:
    entry = state.sms.get(peer)
    if entry is not None:
        entry.meeting_count += 1
        entry.last_meeting = now
        return
    cap = cfg.sms_capacity
    if cap == 0:
        return
    if len(state.sms) >= cap:
        epoch = now // cfg.sms_refresh_interval
        if epoch <= state.evict_epoch:
            return
        state.evict_epoch = epoch
        worst = min(state.sms.values(), key=lambda e: (e.score(now), e.subject))
        del state.sms[worst.subject]
    state.sms[peer] = SmsEntry(peer, 0, now, now)


def _promote_from_sms(state: NodeProtocolState, now: int, cfg: ProtocolConfig) -> list[ProtocolAction]:
    # only entries whose last meeting still lies inside the time-out window
    lam = cfg.lam
    eligible = [e for e in state.sms.values() if e.last_meeting + lam > now]
    if not eligible:
        return []
    best = min(eligible, key=lambda e: (-e.score(now), e.subject))
    del state.sms[best.subject]
    state.tracked[best.subject] = best.last_meeting
    return [StartTimer(best.subject, best.last_meeting + lam)]


def _refill(state: NodeProtocolState, now: int, cfg: ProtocolConfig) -> list[ProtocolAction]:
    if cfg.kind is Kind.ADAPTIVE and len(state.tracked) < cfg.k_tracked:
        return _promote_from_sms(state, now, cfg)
    return []


# -- event handlers -----------------------------------------------------------


def on_meeting(
    state: NodeProtocolState, peer: int, now: int, cfg: ProtocolConfig
) -> list[ProtocolAction]:
    kind = cfg.kind
    if kind is Kind.BENCHMARK or peer in state.revoked:
        return []
    tracked = state.tracked
    lam = cfg.lam

    if kind is Kind.ADABO:
        _sms_observe(state, peer, now, cfg)
        if now < cfg.setup_duration:
            return []
        actions: list[ProtocolAction] = []
        if peer in tracked:
            tracked[peer] = now
            actions.append(StartTimer(peer, now + lam))
        lo_gamma = cfg.gamma
        for subject, last in tracked.items():
            if subject != peer and last + lam - lo_gamma <= now <= last + lam:
                actions.append(UnicastCooperationRequest(peer, subject))
        return actions

    if peer in tracked:
        tracked[peer] = now
        return [StartTimer(peer, now + lam)]
    if kind is Kind.BOOKING:
        return []
    if len(tracked) < cfg.k_tracked:
        state.sms.pop(peer, None)
        tracked[peer] = now
        return [StartTimer(peer, now + lam)]
    if kind is Kind.ADAPTIVE:
        _sms_observe(state, peer, now, cfg)
    return []


def on_timer_expiry(
    state: NodeProtocolState, subject: int, now: int, cfg: ProtocolConfig
) -> list[ProtocolAction]:
    """Alarm, re-arm or discard a time-out for ``subject``.

    A deadline that has moved later re-arms; one that no longer exists is
    a stale expiry and produces nothing.
    """
    last = state.tracked.get(subject)
    if last is None or subject in state.revoked:
        return []
    deadline = last + cfg.timeout
    if deadline > now:
        return [StartTimer(subject, deadline)]
    if deadline < now:
        return []
    if cfg.kind is Kind.ADABO and now < cfg.setup_duration:
        return []
    if subject in state.heard_alarms:
        return []
    state.raised.add(subject)
    return [FloodAlarm(subject)]


def on_flood_received(
    state: NodeProtocolState, kind: str, subject: int, now: int, cfg: ProtocolConfig
) -> list[ProtocolAction]:
    """React to a network-wide ``alarm``, ``claim`` or ``revocation``."""
    if kind == "alarm":
        if subject == state.self_id:
            return [FloodPresenceClaim(state.self_id)]
        state.heard_alarms.add(subject)
        return []

    if kind == "claim":
        state.heard_alarms.discard(subject)
        raised = subject in state.raised
        state.raised.discard(subject)
        if subject not in state.tracked:
            return []
        if raised and cfg.kind is Kind.ADAPTIVE:
            del state.tracked[subject]
            return _refill(state, now, cfg)
        state.tracked[subject] = now
        return [StartTimer(subject, now + cfg.timeout)]

    if kind == "revocation":
        state.revoked.add(subject)
        state.heard_alarms.discard(subject)
        state.raised.discard(subject)
        state.sms.pop(subject, None)
        if state.admin_subject == subject:
            state.admin_subject = None
        if state.tracked.pop(subject, None) is not None:
            return _refill(state, now, cfg)
        return []

    raise ValueError(f"unknown flood kind {kind!r}")


# -- cooperation --------------------------------------------------------------


def base_cooperation_merge(
    a: NodeProtocolState, b_info: list[tuple[int, int]], cfg: ProtocolConfig
) -> list[ProtocolAction]:
    """Adopt a peer's fresher meeting times for subjects both parties track."""
    actions: list[ProtocolAction] = []
    for subject, seen in b_info:
        own = a.tracked.get(subject)
        if own is not None and seen > own:
            a.tracked[subject] = seen
            actions.append(StartTimer(subject, seen + cfg.timeout))
    return actions


def shared_tracking_info(b: NodeProtocolState, a: NodeProtocolState) -> list[tuple[int, int]]:
    return [(s, t) for s, t in b.tracked.items() if s in a.tracked]


def cooperation_reply(state: NodeProtocolState, subject: int, now: int) -> int | None:
    """Most recent evidence ``state`` holds of ``subject`` (own or relayed)."""
    best = state.tracked.get(subject)
    entry = state.sms.get(subject)
    if entry is not None and (best is None or entry.last_meeting > best):
        best = entry.last_meeting
    return best


def on_cooperation_reply(
    state: NodeProtocolState, subject: int, seen: int | None, now: int, cfg: ProtocolConfig
) -> list[ProtocolAction]:
    own = state.tracked.get(subject)
    if own is None or seen is None or seen <= own or seen <= now - cfg.lam:
        return []
    state.tracked[subject] = seen
    return [StartTimer(subject, seen + cfg.lam)]


# -- AdaBo token exchange -----------------------------------------------------


def propose_exchange(
    a: NodeProtocolState, d: NodeProtocolState, now: int, cfg: ProtocolConfig
) -> ProposeExchange | None:
    """``a``'s proposal to swap booking tokens with ``d``, if it strictly gains."""
    if now < cfg.setup_duration or a.exchange_count > cfg.max_exchanges:
        return None
    mine, theirs = a.booking_token, d.booking_token
    if mine is None or theirs is None or mine == a.self_id:
        return None
    if a.score(theirs, now) > a.score(mine, now):
        return ProposeExchange(a.self_id, d.self_id, mine, theirs)
    return None


def evaluate_exchange(
    d: NodeProtocolState, offered: int, requested: int, cfg: ProtocolConfig, now: int = 0
) -> bool:
    """Whether ``d`` gives up ``requested`` (its token) for ``offered``."""
    if cfg.strict_cap and d.exchange_count > cfg.max_exchanges:
        return False
    if offered == d.self_id:
        return False
    keep, take = d.score(requested, now), d.score(offered, now)
    if cfg.flip_exchange_rule:
        return take >= keep
    return keep >= take


def initial_token_pass(
    state: NodeProtocolState, peer: int, now: int, cfg: ProtocolConfig
) -> ProposeExchange | None:
    """Hand the self token to the first silent-slot member met after setup."""
    if now < cfg.setup_duration or state.booking_token != state.self_id:
        return None
    if peer not in state.sms:
        return None
    return ProposeExchange(state.self_id, peer, state.self_id, -1)


def _swap(
    x: NodeProtocolState, y: NodeProtocolState, now: int, cfg: ProtocolConfig
) -> list[tuple[int, ProtocolAction]]:
    out: list[tuple[int, ProtocolAction]] = []
    tx, ty = x.booking_token, y.booking_token
    # evidence travels with the token; a self token is evidenced by this meeting
    seen_x = now if tx == x.self_id else x.tracked.get(tx, now)
    seen_y = now if ty == y.self_id else y.tracked.get(ty, now)
    for node, old, new, seen in ((x, tx, ty, seen_y), (y, ty, tx, seen_x)):
        if old != node.self_id and old != node.admin_subject:
            node.tracked.pop(old, None)
        node.booking_token = new
        node.exchange_count += 1
        if new in node.revoked:
            continue
        prev = node.tracked.get(new)
        if prev is None or seen > prev:
            node.tracked[new] = seen
        out.append((node.self_id, StartTimer(new, node.tracked[new] + cfg.lam)))
        if old == node.self_id:
            out.append((node.self_id, SelfTokenPassed(node.self_id)))
    return out


def meeting_exchange(
    a: NodeProtocolState, b: NodeProtocolState, now: int, cfg: ProtocolConfig
) -> list[tuple[int, ProtocolAction]]:
    """Token negotiation between two meeting AdaBo nodes.

    At most one swap per meeting. Self-token passes take priority, lower
    ID first; otherwise each side may propose once, lower ID first.
    Returns ``(owner, action)`` pairs; proposals and answers are the
    billable unicasts.
    """
    if now < cfg.setup_duration:
        return []
    x, y = (a, b) if a.self_id < b.self_id else (b, a)
    for p, q in ((x, y), (y, x)):
        offer = initial_token_pass(p, q.self_id, now, cfg)
        if offer is not None:
            return [
                (p.self_id, offer._replace(requested_token=q.booking_token)),
                (q.self_id, AcceptExchange(q.self_id, p.self_id)),
                *_swap(p, q, now, cfg),
            ]
    out: list[tuple[int, ProtocolAction]] = []
    for p, q in ((x, y), (y, x)):
        offer = propose_exchange(p, q, now, cfg)
        if offer is None:
            continue
        out.append((p.self_id, offer))
        if evaluate_exchange(q, offer.offered_token, offer.requested_token, cfg, now):
            out.append((q.self_id, AcceptExchange(q.self_id, p.self_id)))
            out.extend(_swap(p, q, now, cfg))
            return out
        out.append((q.self_id, RejectExchange(q.self_id, p.self_id)))
    return out


def release_admin_slot(state: NodeProtocolState, subject: int) -> None:
    """Free the setup-only booking slot once ``subject`` gave its token away."""
    if state.admin_subject != subject:
        return
    state.admin_subject = None
    if state.booking_token != subject:
        state.tracked.pop(subject, None)
