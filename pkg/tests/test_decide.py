from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fabresched.capability import CapabilityModel, ResourceStatus, State
from fabresched.decide import (
    Objective,
    centralized_decision,
    centralized_candidates,
    centralized_reschedule,
    centralized_search,
    distributed_decision,
    evaluate,
    repair_event,
    select,
)
from fabresched.protocol import (
    CandidateSchedule,
    PlannedEvent,
    RepairContext,
    affected_events,
    make_request,
)
from fabresched.risk import RiskReport, RiskWeights
from fabresched.scenario import build_minifab
from fabresched.schedule import EventSpec, validate_production_schedule
from fabresched.sim import generate_initial_schedule
from helpers import cell_ctx, machine

EV = EventSpec.transform("P1", "M1", "raw", "p1")


def cand(end, start=0, n=1, rid="M1"):
    events = [PlannedEvent(EV, rid, start + i, end if i == n - 1 else start + i + 1) for i in range(n)]
    return CandidateSchedule(events)


def test_evaluate_completion_only():
    assert evaluate(cand(500), Objective()) == 500


def test_evaluate_with_risk():
    obj = Objective(weights=RiskWeights(0.2, 0.8, 100.0), risk_enabled=True)
    rep = RiskReport(1 / 13, 0.5, 100.0 * (0.2 / 13 + 0.4))
    assert evaluate(cand(500), obj, rep) == pytest.approx(541.54, abs=0.01)


def test_evaluate_needs_report_when_risk_on():
    with pytest.raises(ValueError):
        evaluate(cand(500), Objective(risk_enabled=True))


def test_evaluate_penalty():
    c = cand(500)
    c.penalty = 5
    assert evaluate(c, Objective(beta=2.0)) == 510


def test_evaluate_two_candidates():
    assert [evaluate(c, Objective()) for c in (cand(500), cand(490))] == [500, 490]


def test_objective_validation():
    with pytest.raises(ValueError):
        Objective(alpha=(1.0, 1.0))
    with pytest.raises(ValueError):
        Objective(alpha=(-1.0,))
    with pytest.raises(ValueError):
        Objective(metrics=("cost",))


def test_select_argmin():
    d = select([(cand(100), None), (cand(90), None), (cand(95), None)], Objective())
    assert d.chosen.completion == 90 and d.j_value == 90 and not d.escalated


def test_select_tie_on_completion():
    # span objective: both J = 10, the earlier completion wins
    obj = Objective(metrics=("span",))
    a, b = cand(500, start=490), cand(490, start=480)
    assert select([(a, None), (b, None)], obj).chosen is b


def test_select_tie_on_event_count_then_resources():
    obj = Objective()
    one, two = cand(500), cand(500, n=2)
    assert select([(two, None), (one, None)], obj).chosen is one
    m2, m1 = cand(500, rid="M2"), cand(500, rid="M1")
    assert select([(m2, None), (m1, None)], obj).chosen is m1


def test_select_empty_escalates():
    d = select([], Objective())
    assert d.escalated and d.chosen is None and d.j_value == math.inf


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=8), st.floats(0.1, 100))
def test_select_is_scale_invariant_argmin(ends, scale):
    cands = [cand(e) for e in ends]
    base = select([(c, None) for c in cands], Objective())
    scaled = select([(c, None) for c in cands], Objective(alpha=(scale,)))
    assert base.j_value == min(ends)
    assert all(base.j_value <= j for _, j in base.all_evaluated)
    assert scaled.chosen is base.chosen


def test_evaluate_is_pure():
    c = cand(321)
    assert len({evaluate(c, Objective()) for _ in range(5)}) == 1


# -- centralized baseline -----------------------------------------------------


def test_unique_option_agrees():
    ctx = cell_ctx()
    req = make_request(ctx, ctx.schedule.resources["M1"].entries[0], "M1")
    dist, n, _ = distributed_decision(ctx, req, Objective())
    cent, msgs = centralized_decision(ctx, req, Objective())
    assert n == 1 and len(cent.all_evaluated) == 1
    assert dist.chosen.signature() == cent.chosen.signature() and dist.j_value == cent.j_value
    assert msgs == 3 * 3


def test_three_hosts_central_not_worse():
    ctx = cell_ctx(
        machines=[machine("M1"), machine("M2", cost=30), machine("M3", cost=12), machine("M4", cost=20)],
        robots=[
            CapabilityModel.robot("R1", {"Entry", "Exit", "M1", "M2", "M3"}, 5),
            CapabilityModel.robot("R2", {"Entry", "Exit", "M3", "M4"}, 9),
        ],
    )
    req = make_request(ctx, ctx.schedule.resources["M1"].entries[0], "M1")
    dist, _, _ = distributed_decision(ctx, req, Objective())
    cent = centralized_search(ctx, req, Objective())
    assert len(dist.all_evaluated) >= 3
    assert all(cent.j_value <= j for _, j in dist.all_evaluated)
    assert cent.j_value == min(j for _, j in centralized_search(ctx, req, Objective()).all_evaluated)


def test_search_equals_unpruned_enumeration():
    ctx = cell_ctx(
        machines=[machine("M1"), machine("M2", cost=30), machine("M3", cost=12)],
        robots=[
            CapabilityModel.robot("R1", {"Entry", "Exit", "M1", "M2", "M3"}, 5),
            CapabilityModel.robot("R2", {"Entry", "M3"}, 1),
        ],
    )
    req = make_request(ctx, ctx.schedule.resources["M1"].entries[0], "M1")
    every = select([(c, None) for c in centralized_candidates(ctx, req)], Objective())
    best = centralized_search(ctx, req, Objective())
    assert best.chosen.signature() == every.chosen.signature()


def test_centralized_messages_formula():
    sc = build_minifab()
    sched, _ = generate_initial_schedule(sc)
    reg = sc.directory()
    statuses = {m.resource: ResourceStatus(nominal_ops=30) for m in reg.machines()}
    statuses["M07"] = ResourceStatus(State.DOWN, 3500, 0, 30)
    ctx = RepairContext(
        sched, reg, statuses, 2000, sc.horizon, sc.delta, sc.transfer_points(), sc.requirements(),
        {pid: t for pid, _, t in sc.product_list()},
    )
    report = affected_events(sched.resources["M07"], 2000)
    report.affected = report.affected[:2]
    decisions, msgs, n_cands = centralized_reschedule(ctx, report, Objective())
    assert len(reg) == 26 and len(decisions) == 2
    assert msgs == 26 * (3 + 3) == 156
    assert n_cands > 0
    assert validate_production_schedule(sched, reg.sites()) == []


# -- escalation -----------------------------------------------------------------


def test_escalation_empty_cluster_defers():
    ctx = cell_ctx(machines=[machine("M1"), machine("M2", procs=("P2",))])
    e = ctx.schedule.resources["M1"].entries[0]
    out = repair_event(ctx, e, "M1", Objective(), "distributed")
    assert out.escalation.reason == "EmptyCluster"
    assert out.escalation.resolution == "deferred" and out.deferred
    # the operation waits for the repair on its own machine
    assert e.resource == "M1" and e.start >= 500
    assert validate_production_schedule(ctx.schedule, ctx.registry.sites()) == []


def test_escalation_no_capacity():
    robots = [CapabilityModel.robot("R1", {"Entry", "Exit", "M1"}, 5)]
    ctx = cell_ctx(robots=robots)
    e = ctx.schedule.resources["M1"].entries[0]
    out = repair_event(ctx, e, "M1", Objective(), "distributed")
    assert out.escalation.reason == "NoCapacity" and out.deferred


def test_propagation_depth_limits_repair():
    # M2 is only reachable through a relay; one hop is not enough
    robots = [
        CapabilityModel.robot("R1", {"Entry", "Exit", "M1"}, 5),
        CapabilityModel.robot("R2", {"Entry", "D"}, 5),
        CapabilityModel.robot("R3", {"D", "M2", "Exit"}, 5),
    ]
    ctx = cell_ctx(robots=robots)
    ctx.transfer_points = frozenset({"Entry", "Exit", "D"})
    ctx.max_hops = 1
    e = ctx.schedule.resources["M1"].entries[0]
    out = repair_event(ctx, e, "M1", Objective(), "distributed")
    assert out.deferred
    ctx = cell_ctx(robots=robots)
    ctx.transfer_points = frozenset({"Entry", "Exit", "D"})
    e = ctx.schedule.resources["M1"].entries[0]
    out = repair_event(ctx, e, "M1", Objective(), "distributed")
    assert not out.deferred and out.escalation is None
    # relays via Exit (R1) and via D (R2) tie; the lower resource tuple wins
    assert [p.resource for p in out.decision.chosen.events] == ["R1", "R3", "M2", "R3"]


def test_risk_on_decision_reports_risk():
    ctx = cell_ctx()
    ctx.rng = np.random.default_rng(0)
    e = ctx.schedule.resources["M1"].entries[0]
    out = repair_event(ctx, e, "M1", Objective(risk_enabled=True, weights=RiskWeights(0.2, 0.8, 1000.0)), "centralized")
    assert out.decision.risk is not None
    assert 0 <= out.decision.risk.r1 <= 1 and 0 <= out.decision.risk.r2 <= 1
