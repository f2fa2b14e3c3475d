import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capsim.engine import CaptureScenario, Simulation, SimulationError, SimulationResult, run_simulation
from capsim.protocols import Kind, ProtocolConfig
from capsim.synthetic import community_trace
from capsim.trace import ContactTrace, make_trace

TWO_NODE = make_trace([(0, 0, 1), (100, 0, 1), (200, 0, 1)], n=2, duration=1000)


def test_two_node_base_capture():
    cfg = ProtocolConfig(kind="base", lam=150, delta=60)
    res = run_simulation(TWO_NODE, cfg, CaptureScenario(1, 210))
    assert res.alarm_time == 350
    assert res.detection_time == 140
    assert res.revocation_time == 410
    assert res.false_positive_count == 0
    assert not res.false_negative


def test_no_capture():
    res = run_simulation(TWO_NODE, ProtocolConfig(kind="base", lam=150))
    assert res.detection_time is None
    assert not res.false_negative
    assert res.false_positive_count == 0


def test_answered_alarms_cost_alarm_plus_claim():
    # each node tracks the other; both time out at 350 and both answer
    tr = make_trace([(0, 0, 1), (100, 0, 1), (200, 0, 1)], n=2, duration=400)
    res = run_simulation(tr, ProtocolConfig(kind="base", lam=150, delta=60))
    assert [(a.time, a.subject) for a in res.alarm_log] == [(350, 1), (350, 0)]
    assert all(a.answered for a in res.alarm_log)
    assert res.ledger.sent == [4, 4]
    assert res.ledger.by_class == {"alarm": 4, "claim": 4, "exchange": 0, "cooperation": 0}


def test_flood_costs_every_live_node():
    n = 39
    tr = make_trace([(0, 0, 1)], n=n, duration=200)
    res = run_simulation(tr, ProtocolConfig(kind="base", lam=100, delta=60), CaptureScenario(1, 50))
    assert res.ledger.by_class["alarm"] == n - 1
    assert res.ledger.total_sent == res.ledger.total_received == n - 1
    assert res.ledger.sent[1] == 0


def test_single_node_benchmark():
    tr = ContactTrace(n=1, events=(), duration=99)
    res = run_simulation(tr, ProtocolConfig(kind="benchmark", tau=100))
    assert res.ledger.sent == [1] and res.ledger.received == [1]


def test_two_floods_same_second():
    tr = make_trace([(0, 0, 2), (0, 1, 2)], n=3, duration=300)
    cfg = ProtocolConfig(kind="base", lam=100, delta=10)
    res = run_simulation(tr, cfg, CaptureScenario(2, 50))
    # watchers 0 and 1 both time out on node 2 at t=100; the second is suppressed
    assert [(a.time, a.watcher) for a in res.alarm_log] == [(100, 0)]
    assert res.revocation_time == 110

    tr = make_trace([(0, 0, 1), (0, 2, 3)], n=4, duration=150)
    res = run_simulation(tr, ProtocolConfig(kind="base", lam=100, delta=10))
    assert [a.time for a in res.alarm_log] == [100] * 4
    assert res.ledger.sent == [8] * 4


def test_concurrent_alarms_single_revocation():
    tr = make_trace([(0, 0, 2), (0, 1, 2)], n=3, duration=300)
    cfg = ProtocolConfig(kind="base", lam=100, delta=10, k_tracked=2)
    res = run_simulation(tr, cfg, CaptureScenario(2, 50))
    assert res.detection_time == 50
    assert res.false_positive_count == 0


def test_measure_from_excludes_early_messages():
    cfg = ProtocolConfig(kind="base", lam=150, delta=60)
    early = run_simulation(TWO_NODE, cfg, CaptureScenario(1, 210), measure_from=0)
    late = run_simulation(TWO_NODE, cfg, CaptureScenario(1, 210), measure_from=351)
    assert early.ledger.total_sent == 1
    assert late.ledger.total_sent == 0


def test_meetings_after_capture_are_ignored():
    tr = make_trace([(0, 0, 1), (100, 0, 1), (300, 0, 1)], n=2, duration=1000)
    res = run_simulation(tr, ProtocolConfig(kind="base", lam=150), CaptureScenario(1, 150))
    assert res.alarm_time == 250


def test_capture_same_instant_as_meeting():
    tr = make_trace([(0, 0, 1), (100, 0, 1)], n=2, duration=1000)
    res = run_simulation(tr, ProtocolConfig(kind="base", lam=150), CaptureScenario(1, 100))
    assert res.alarm_time == 150


@pytest.mark.parametrize(
    "scenario",
    [CaptureScenario(5, 10), CaptureScenario(0, 5000), CaptureScenario(-1, 0)],
)
def test_bad_scenarios(scenario):
    with pytest.raises(SimulationError):
        run_simulation(TWO_NODE, ProtocolConfig(kind="base"), scenario)


def test_second_capture_rejected():
    sim = Simulation(TWO_NODE, ProtocolConfig(kind="base"), CaptureScenario(0, 10))
    with pytest.raises(SimulationError):
        sim.inject_capture(CaptureScenario(1, 20))


def test_capture_in_the_past_rejected():
    sim = Simulation(TWO_NODE, ProtocolConfig(kind="base"))
    sim.advance(500)
    with pytest.raises(SimulationError):
        sim.inject_capture(CaptureScenario(1, 100))


def test_booking_assignment_mismatch():
    with pytest.raises(ValueError):
        run_simulation(TWO_NODE, ProtocolConfig(kind="booking", booking_assignment=(1, 2, 0)))


def test_adabo_capture_during_setup_detected_after_setup():
    tr = community_trace(8, 120000, communities=2, seed=1)
    cfg = ProtocolConfig(kind="adabo", lam=5000, setup_duration=42000)
    res = run_simulation(tr, cfg, CaptureScenario(3, 1000))
    assert res.alarm_time is not None and res.alarm_time <= 42000 + 5000
    assert not res.false_negative


def test_result_json_roundtrip():
    res = run_simulation(TWO_NODE, ProtocolConfig(kind="base", lam=150), CaptureScenario(1, 210))
    back = SimulationResult.from_dict(json.loads(res.to_json()))
    assert back == res


TRACE = community_trace(10, 60000, communities=2, isolated=(9,), isolated_rate=1 / 30000, seed=11)


@pytest.mark.parametrize("kind", [k.value for k in Kind])
def test_fork_matches_fresh_run(kind):
    cfg = ProtocolConfig(kind=kind, lam=4000, tau=4000, setup_duration=10000, gamma=1000)
    base = Simulation(TRACE, cfg, measure_from=5000)
    for t, v in [(20000, 3), (20000, 9), (35000, 0)]:
        base.advance(t)
        fork = base.fork()
        fork.inject_capture(CaptureScenario(v, t))
        assert fork.run() == run_simulation(TRACE, cfg, CaptureScenario(v, t), 5000)


@pytest.mark.parametrize("victim", [0, 4, 9])
def test_shared_benchmark_timers_equivalent(victim):
    cfg = ProtocolConfig(kind="benchmark", tau=3000)
    sc = CaptureScenario(victim, 21000)
    fast = Simulation(TRACE, cfg, sc, 1000).run()
    slow = Simulation(TRACE, cfg, sc, 1000, fast_benchmark=False).run()
    assert fast == slow
    assert fast.detection_time <= 3000


@pytest.mark.parametrize("kind", [k.value for k in Kind])
def test_ledger_conservation_and_determinism(kind):
    cfg = ProtocolConfig(kind=kind, lam=4000, tau=4000, setup_duration=10000, gamma=1000)
    sc = CaptureScenario(2, 30000)
    a = run_simulation(TRACE, cfg, sc, 0)
    b = run_simulation(TRACE, cfg, sc, 0)
    assert a.to_json() == b.to_json()
    assert a.ledger.total_sent == a.ledger.total_received
    assert a.false_positive_count == 0


@pytest.mark.parametrize("kind", [k.value for k in Kind])
def test_captured_node_is_silent(kind):
    cfg = ProtocolConfig(kind=kind, lam=4000, tau=4000, setup_duration=10000, gamma=1000)
    sc = CaptureScenario(4, 25000)
    seen = {}

    def snap(sim):
        if sim.now > sc.capture_time and "sent" not in seen:
            seen["sent"] = sim.ledger_snapshot().sent[4]
        if sim.now > sc.capture_time:
            assert sim.ledger_snapshot().sent[4] == seen["sent"]

    res = Simulation(TRACE, cfg, sc, on_step=snap).run()
    assert all(a.watcher != 4 for a in res.alarm_log if a.time > sc.capture_time)


def test_on_step_sees_monotone_time():
    times = []
    run_simulation(TRACE, ProtocolConfig(kind="adaptive", lam=4000), on_step=lambda s: times.append(s.now))
    assert times == sorted(times) and len(times) > len(TRACE.events)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["base", "booking", "adaptive", "adabo"]))
def test_detection_bound_property(seed, kind):
    rng = random.Random(seed)
    n = rng.randint(3, 6)
    dur = 20000
    events = [(rng.randint(0, dur), *rng.sample(range(n), 2)) for _ in range(rng.randint(5, 80))]
    tr = make_trace(events, n=n, duration=dur)
    cfg = ProtocolConfig(kind=kind, lam=rng.randint(500, 3000), delta=30, setup_duration=2000, gamma=200,
                         sms_capacity=2)
    sc = CaptureScenario(rng.randrange(n), rng.randint(2000, 15000))
    res = run_simulation(tr, cfg, sc)
    assert res.false_positive_count == 0
    assert res.ledger.total_sent == res.ledger.total_received
    if res.detection_time is not None:
        assert 0 <= res.detection_time <= cfg.lam
    if kind == "booking":
        assert not res.false_negative
