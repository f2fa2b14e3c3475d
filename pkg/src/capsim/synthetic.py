"""Seeded synthetic contact traces with community structure.

Used as a stand-in when a real conference trace is not at hand. Meetings
between each pair follow a Poisson process whose rate depends on whether
the two nodes share a community; "isolated" nodes meet everyone rarely
and only from a given instant on.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

from .trace import ContactTrace, make_trace


@dataclass(frozen=True)
class CommunityModel:
    communities: tuple[tuple[int, ...], ...]
    intra_rate: float  # meetings per second per pair
    inter_rate: float
    isolated: tuple[int, ...] = ()
    isolated_rate: float = 0.0
    isolated_from: int = 0

    def rate(self, a: int, b: int) -> float:
        if a in self.isolated or b in self.isolated:
            return self.isolated_rate
        for group in self.communities:
            if a in group and b in group:
                return self.intra_rate
        return self.inter_rate


def _poisson_times(rng: random.Random, rate: float, start: float, end: float) -> Iterable[int]:
    if rate <= 0:
        return
    t = start + rng.expovariate(rate)
    while t <= end:
        yield int(t)
        t += rng.expovariate(rate)


def pair_events(
    nodes: Iterable[int], model: CommunityModel, start: int, end: int, rng: random.Random
) -> list[tuple[int, int, int]]:
    out = []
    for a, b in combinations(sorted(nodes), 2):
        lo = start
        if a in model.isolated or b in model.isolated:
            lo = max(start, model.isolated_from)
        out.extend((t, a, b) for t in _poisson_times(rng, model.rate(a, b), lo, end))
    return out


def split_communities(nodes: list[int], k: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(nodes[i::k]) for i in range(k))


def community_trace(
    n: int,
    duration: int,
    *,
    communities: int = 3,
    intra_rate: float = 1 / 3000,
    inter_rate: float = 1 / 40000,
    isolated: Iterable[int] = (),
    isolated_rate: float = 0.0,
    isolated_from: int = 0,
    seed: int = 0,
) -> ContactTrace:
    """Dense-ID trace of ``n`` nodes over ``[0, duration]``."""
    rng = random.Random(seed)
    iso = tuple(sorted(isolated))
    members = [i for i in range(n) if i not in iso]
    model = CommunityModel(
        split_communities(members, max(1, communities)),
        intra_rate,
        inter_rate,
        iso,
        isolated_rate,
        isolated_from,
    )
    return make_trace(pair_events(range(n), model, 0, duration, rng), n=n, duration=duration)


# raw-ID layout of the conference stand-in
EXPERIMENT_IDS = range(1, 42)
SILENT_IN_WINDOW = (21, 41)
ISOLATED_IDS = (13, 18)
EXTERNAL_IDS = range(42, 60)
WINDOW = (73000, 115000)


def infocom_like_raw(seed: int = 2005, scale: float = 1.0) -> ContactTrace:
    """Raw-ID trace shaped like the conference data set.

    41 experiment devices (IDs 1..41) plus external devices (42..59); the
    daytime window is ``[73000, 115000]``; devices 21 and 41 are silent
    inside it; devices 13 and 18 are isolated and first show up late.
    ``scale`` multiplies every meeting rate.
    """
    rng = random.Random(seed)
    lo, hi = WINDOW
    active = [i for i in EXPERIMENT_IDS if i not in SILENT_IN_WINDOW]
    regular = [i for i in active if i not in ISOLATED_IDS]
    model = CommunityModel(
        split_communities(regular, 4),
        intra_rate=scale / 6000,
        inter_rate=scale / 60000,
        isolated=ISOLATED_IDS,
        isolated_rate=scale / 400000,
        isolated_from=lo + 15000,
    )
    events = pair_events(active, model, lo - 10000, hi + 10000, rng)
    # silent devices only meet outside the window
    for s in SILENT_IN_WINDOW:
        for peer in rng.sample(regular, 5):
            events.append((rng.randrange(0, lo - 1), s, peer))
            events.append((rng.randrange(hi + 1, hi + 20000), s, peer))
    for ext in EXTERNAL_IDS:
        for peer in rng.sample(regular, 4):
            events.append((rng.randrange(lo, hi + 1), ext, peer))
    return make_trace(events, n=max(EXTERNAL_IDS) + 1, duration=hi + 20000)
