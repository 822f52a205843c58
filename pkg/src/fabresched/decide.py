"""Objective evaluation, candidate selection, the exhaustive centralized
baseline and the escalation path taken when nobody can bid."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .bus import MessageBus
from .capability import clustering_ras, match_requirements
from .protocol import (
    CandidateSchedule,
    Chain,
    DisruptionReport,
    EmptyCluster,
    Overlay,
    RepairContext,
    RepairRequest,
    all_paths,
    broadcast_request,
    build_candidates,
    commit_candidate,
    defer_to_repair,
    extend_chain,
    hop_steps,
    host_allowed,
    check_candidate,
    generate_candidate,
    make_request,
    notify_sequential_removals,
    removed_for,
)
from .risk import RiskReport, RiskWeights, assess, breakdown_probability, standard_draws, term_q
from .schedule import ScheduledEvent

METRICS = ("completion", "span", "events")


@dataclass(frozen=True)
class Objective:
    alpha: tuple[float, ...] = (1.0,)
    metrics: tuple[str, ...] = ("completion",)
    beta: float = 1.0
    weights: RiskWeights = field(default_factory=RiskWeights)
    risk_enabled: bool = False
    sigma_frac: float = 0.05
    n_samples: int = 1000

    def __post_init__(self):
        if len(self.alpha) != len(self.metrics):
            raise ValueError("alpha and metrics must have the same length")
        if any(a < 0 for a in self.alpha) or self.beta < 0:
            raise ValueError("objective weights must be non-negative")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")


@dataclass
class Decision:
    chosen: CandidateSchedule | None
    j_value: float
    all_evaluated: list[tuple[CandidateSchedule, float]] = field(default_factory=list)
    escalated: bool = False
    risk: RiskReport | None = None


@dataclass
class Escalation:
    resource: str
    product: str
    event: str
    tick: int
    reason: str  # EmptyCluster or NoCapacity
    resolution: str = ""  # centralized or deferred


@dataclass
class RepairOutcome:
    """One affected event handled during a disruption."""

    entry: ScheduledEvent
    span_len: int
    decision: Decision
    messages: int
    candidates: int
    mode: str
    escalation: Escalation | None = None
    deferred: bool = False
    wall_ms: float = 0.0


def metric_value(c: CandidateSchedule, name: str) -> float:
    if name == "completion":
        return c.completion
    if name == "span":
        return c.completion - c.events[0].start
    return len(c.events)


def evaluate(candidate: CandidateSchedule, objective: Objective, risk_report: RiskReport | None = None) -> float:
    j = sum(a * metric_value(candidate, m) for a, m in zip(objective.alpha, objective.metrics))
    j += objective.beta * candidate.penalty
    if objective.risk_enabled:
        if risk_report is None:
            raise ValueError("risk-enabled evaluation needs a risk report")
        w = objective.weights
        j += w.W * (w.w1 * risk_report.r1 + w.w2 * risk_report.r2)
    return j


def _tie_key(c: CandidateSchedule, j: float) -> tuple:
    # event names last so the order is total over distinct candidates
    return (j, c.completion, len(c.events), c.resources, tuple(p.event.name for p in c.events))


def select(
    candidates: Sequence[tuple[CandidateSchedule, RiskReport | None]],
    objective: Objective,
) -> Decision:
    if not candidates:
        return Decision(None, math.inf, [], escalated=True)
    scored = [(c, evaluate(c, objective, r), r) for c, r in candidates]
    best = min(scored, key=lambda t: _tie_key(t[0], t[1]))
    return Decision(best[0], best[1], [(c, j) for c, j, _ in scored], escalated=False, risk=best[2])


def assess_candidate(
    ctx: RepairContext,
    cand: CandidateSchedule,
    objective: Objective,
    z: np.ndarray | None = None,
    machines=None,
    cache: dict | None = None,
) -> RiskReport:
    if machines is None:
        machines = {r: st for r, st in ctx.statuses.items() if not ctx.registry[r].is_transport}
    return assess(
        cand.slack_terms,
        machines,
        objective.weights,
        objective.sigma_frac,
        objective.n_samples,
        ctx.rng,
        resources=cand.resources,
        z=z,
        cache=cache,
    )


def _scored(ctx: RepairContext, cands: Iterable[CandidateSchedule], objective: Objective):
    if not objective.risk_enabled:
        return [(c, None) for c in cands]
    # one block of draws per decision: candidates compared on common random numbers
    z = standard_draws(ctx.rng, objective.n_samples) if ctx.rng is not None and objective.n_samples > 0 else None
    machines = {r: st for r, st in ctx.statuses.items() if not ctx.registry[r].is_transport}
    cache: dict = {}
    return [(c, assess_candidate(ctx, c, objective, z, machines, cache)) for c in cands]


def _finish(ctx: RepairContext, decision: Decision, objective: Objective) -> None:
    if decision.chosen is not None and decision.risk is None:
        decision.risk = assess_candidate(ctx, decision.chosen, objective)


def _plans(ctx: RepairContext, req: RepairRequest):
    """(host, inbound legs, outbound legs, penalty) for every eligible host."""
    a, b = req.x_prior.location, req.x_post.location
    if not req.transforms:
        paths = [p for p in all_paths(ctx, a, b, ctx.max_hops) if p]
        return [(ctx.registry[p[0][0]], [p], [[]], 0.0) for p in paths]
    plans = []
    for host in sorted(ctx.registry.machines(), key=lambda m: m.resource):
        if not ctx.up(host.resource) or not host_allowed(host, req):
            continue
        penalty = 0.0
        ok = True
        for ev in req.transforms:
            m = match_requirements(ev.name, req.requirements, host)
            if not m.accepted:
                ok = False
                break
            penalty += m.penalty
        if ok:
            legs_in = all_paths(ctx, a, host.site, ctx.max_hops)
            legs_out = all_paths(ctx, host.site, b, ctx.max_hops)
            plans.append((host, legs_in, legs_out, penalty))
    return plans


def centralized_candidates(ctx: RepairContext, req: RepairRequest) -> list[CandidateSchedule]:
    """Every host x transport-path combination over the span's slots."""
    overlay = Overlay(ctx, removed_for(ctx, req))
    out: list[CandidateSchedule] = []
    for host, legs_in, legs_out, penalty in _plans(ctx, req):
        out += build_candidates(ctx, host, req, legs_in, legs_out, penalty, overlay)
    return out


def centralized_search(ctx: RepairContext, req: RepairRequest, objective: Objective) -> Decision:
    """Exhaustive search for the J-optimal repair with exact pruning.

    A partial chain ending at tick t cannot beat the incumbent when
    ``alpha_c * t + beta * penalty + W * w2 * P(host)`` already exceeds it
    (completion only grows, the delay term is non-negative and the
    breakdown term of a candidate is fixed by its host). Ties are never
    pruned, so the result equals the unpruned argmin.
    """
    overlay = Overlay(ctx, removed_for(ctx, req))
    a_c = sum(a for a, m in zip(objective.alpha, objective.metrics) if m == "completion")
    machines = {r: st for r, st in ctx.statuses.items() if not ctx.registry[r].is_transport}
    z = None
    if objective.risk_enabled and ctx.rng is not None and objective.n_samples > 0:
        z = standard_draws(ctx.rng, objective.n_samples)
    w = objective.weights
    cache: dict = {}
    plans = []
    for host, legs_in, legs_out, penalty in _plans(ctx, req):
        fixed = objective.beta * penalty
        if objective.risk_enabled and host.resource in machines:
            fixed += w.W * w.w2 * breakdown_probability(machines[host.resource])
        plans.append((fixed, host.resource, host, legs_in, legs_out, penalty))
    plans.sort(key=lambda p: (p[0], p[1]))
    best: tuple | None = None
    best_j = math.inf
    evaluated: list[tuple[CandidateSchedule, float]] = []
    start = Chain({}, (), (), (), req.requested_time)
    for fixed, _, host, legs_in, legs_out, penalty in plans:
        if a_c * req.requested_time + fixed > best_j:
            continue
        middle = [(ev.at(host.site), host.resource, host.nominal_cost[ev.name]) for ev in req.transforms]
        seen_in = set()
        for p_in in legs_in:
            if tuple(p_in) in seen_in:
                continue
            seen_in.add(tuple(p_in))
            head = start
            for step in hop_steps(ctx, p_in) + middle:
                head = extend_chain(ctx, overlay, head, step)
                if head is None or a_c * head.t + fixed > best_j:
                    head = None
                    break
            if head is None:
                continue
            bound = fixed
            if objective.risk_enabled:
                # the host's delay term is settled once it is placed
                qs = [
                    cache.setdefault(t, term_q(t, objective.sigma_frac, objective.n_samples, ctx.rng, z))
                    if z is not None
                    else term_q(t)
                    for t in head.terms
                    if t.resource in machines
                ]
                bound += w.W * w.w1 * max(qs, default=0.0)
                if a_c * head.t + bound > best_j:
                    continue
            seen_out = set()
            for p_out in legs_out:
                if tuple(p_out) in seen_out:
                    continue
                seen_out.add(tuple(p_out))
                chain = head
                for step in hop_steps(ctx, p_out):
                    chain = extend_chain(ctx, overlay, chain, step)
                    if chain is None or a_c * chain.t + bound > best_j:
                        chain = None
                        break
                if chain is None or not chain.planned:
                    continue
                cand = chain.candidate()
                if not check_candidate(req, cand):
                    continue
                cand.penalty = penalty
                report = assess_candidate(ctx, cand, objective, z, machines, cache) if objective.risk_enabled else None
                j = evaluate(cand, objective, report)
                evaluated.append((cand, j))
                key = _tie_key(cand, j)
                if best is None or key < best[0]:
                    best = (key, cand, report)
                    best_j = j
    if best is None:
        return Decision(None, math.inf, evaluated, escalated=True)
    return Decision(best[1], best_j, evaluated, escalated=False, risk=best[2])


def centralized_decision(ctx: RepairContext, req: RepairRequest, objective: Objective) -> tuple[Decision, int]:
    decision = centralized_search(ctx, req, objective)
    r = len(ctx.registry)
    for rid in sorted(ctx.registry.models):
        for _ in req.span:
            ctx.bus.send("central", rid, "query")
    return decision, r * len(req.span)


def distributed_decision(ctx: RepairContext, req: RepairRequest, objective: Objective) -> tuple[Decision, int, str]:
    """Broadcast, collect bids and pick one. Returns (decision, candidates, reason-if-none)."""
    disrupted = req.disrupted
    ctx.bus.query(disrupted)
    cluster = clustering_ras(req.affected.event.name, disrupted, ctx.registry)
    try:
        broadcast_request(req, cluster, ctx.bus)
    except EmptyCluster:
        return select([], objective), 0, "EmptyCluster"
    overlay = Overlay(ctx, removed_for(ctx, req))
    cands: list[CandidateSchedule] = []
    for rid in sorted(cluster):
        bidder = ctx.registry[rid]
        offered: list[CandidateSchedule] = []
        if ctx.up(rid):
            penalty = 0.0
            accepted = True
            # requirements constrain processing hosts, not carriers
            for ev in req.transforms:
                m = match_requirements(ev.name, req.requirements, bidder)
                accepted = accepted and m.accepted
                penalty += m.penalty
            if accepted:
                offered, _ = generate_candidate(bidder, req, ctx, penalty, overlay)
        ctx.bus.send(rid, disrupted, "response")
        cands += offered
    decision = select(_scored(ctx, cands, objective), objective)
    return decision, len(cands), "" if cands else "NoCapacity"


def escalate(ctx: RepairContext, req: RepairRequest, reason: str) -> Escalation:
    return Escalation(req.disrupted, req.product, req.affected.event.name, ctx.now, reason)


def audit_pair(ctx: RepairContext, req: RepairRequest, objective: Objective) -> tuple[float, float]:
    """(J* centralized, J* distributed) on the current state, without side effects."""
    scratch = replace(ctx, bus=MessageBus(), rng=np.random.default_rng(0))
    central, _ = centralized_decision(scratch, req, objective)
    scratch = replace(ctx, bus=MessageBus(), rng=np.random.default_rng(0))
    dist, _, _ = distributed_decision(scratch, req, objective)
    return central.j_value, dist.j_value


def repair_event(
    ctx: RepairContext,
    entry: ScheduledEvent,
    disrupted: str,
    objective: Objective,
    mode: str,
    audit: list | None = None,
) -> RepairOutcome:
    before = ctx.bus.count
    t0 = time.perf_counter()
    req = make_request(ctx, entry, disrupted)
    if audit is not None:
        audit.append(audit_pair(ctx, req, objective))
    escalation = None
    deferred = False
    if mode == "centralized":
        decision, _ = centralized_decision(ctx, req, objective)
        n_cands = len(decision.all_evaluated)
    else:
        decision, n_cands, reason = distributed_decision(ctx, req, objective)
        if decision.escalated:
            escalation = escalate(ctx, req, reason)
            decision, _ = centralized_decision(ctx, req, objective)
            n_cands += len(decision.all_evaluated)
            escalation.resolution = "centralized" if decision.chosen else "deferred"
    if decision.chosen is not None:
        _finish(ctx, decision, objective)
        if mode != "centralized":
            for p in decision.chosen.events:
                ctx.bus.send(disrupted, p.resource, "inform")
            notify_sequential_removals(entry, req.span, ctx.bus)
        commit_candidate(ctx, req, decision.chosen)
    else:
        if escalation is None:
            escalation = escalate(ctx, req, "NoCapacity")
            escalation.resolution = "deferred"
        defer_to_repair(ctx, entry)
        deferred = True
    wall = (time.perf_counter() - t0) * 1000.0
    return RepairOutcome(
        entry, len(req.span), decision, ctx.bus.count - before, n_cands, mode, escalation, deferred, wall
    )


def handle_disruption(
    ctx: RepairContext,
    report: DisruptionReport,
    objective: Objective,
    mode: str,
    audit: list | None = None,
) -> list[RepairOutcome]:
    """Repair every affected event in priority order at one tick."""
    ctx.unavailable.add(report.resource)
    outcomes = []
    try:
        for entry in report.affected:
            rs = ctx.schedule.resources[report.resource]
            if not any(e is entry for e in rs.entries):
                continue  # already moved as part of an earlier span
            outcomes.append(repair_event(ctx, entry, report.resource, objective, mode, audit))
    finally:
        ctx.unavailable.discard(report.resource)
    return outcomes


def centralized_reschedule(
    ctx: RepairContext, report: DisruptionReport, objective: Objective
) -> tuple[list[Decision], int, int]:
    """Decisions, messages and candidates examined for a whole disruption."""
    outs = handle_disruption(ctx, report, objective, "centralized")
    return [o.decision for o in outs], sum(o.messages for o in outs), sum(o.candidates for o in outs)
