"""Distributed repair protocol: affected-event ordering, replacement spans,
bid broadcast, candidate generation and committing a chosen repair."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .bus import MessageBus
from .capability import (
    CapabilityModel,
    Directory,
    EventNotFound,
    Requirements,
    ResourceStatus,
    State,
    collaborative_ras,
)
from .risk import SlackTerm
from .schedule import (
    EventSpec,
    InapplicableEvent,
    NoFeasibleSlot,
    ProductionSchedule,
    ProductSchedule,
    ProductState,
    ResourceSchedule,
    ScheduledEvent,
    apply_sequence,
    earliest_start,
    first_fit,
)


class EmptyCluster(RuntimeError):
    pass


class PlannedEvent(NamedTuple):
    event: EventSpec
    resource: str
    start: int
    end: int


@dataclass
class RepairRequest:
    affected: ScheduledEvent
    requirements: Requirements
    x_prior: ProductState
    x_post: ProductState
    product: str
    requested_time: int
    span: list[ScheduledEvent] = field(default_factory=list)
    disrupted: str = ""

    @property
    def transforms(self) -> list[EventSpec]:
        return [e.event for e in self.span if not e.event.is_transport]


@dataclass
class CandidateSchedule:
    events: list[PlannedEvent]
    penalty: float = 0.0
    shifts: list[tuple[ScheduledEvent, int]] = field(default_factory=list)
    slack_terms: list[SlackTerm] = field(default_factory=list)

    @property
    def completion(self) -> int:
        return self.events[-1].end

    @property
    def resources(self) -> tuple[str, ...]:
        return tuple(p.resource for p in self.events)

    def signature(self) -> tuple:
        return tuple((p.event, p.resource, p.start, p.end) for p in self.events)


@dataclass
class DisruptionReport:
    resource: str
    at: int
    affected: list[ScheduledEvent]


@dataclass
class RepairContext:
    """Everything an agent can see while repairing at one tick."""

    schedule: ProductionSchedule
    registry: Directory
    statuses: dict[str, ResourceStatus]
    now: int
    horizon: int
    delta: int
    transfer_points: frozenset[str]
    requirements: dict[str, Requirements]
    release: dict[str, int] = field(default_factory=dict)
    max_hops: int = 2
    bus: MessageBus = field(default_factory=MessageBus)
    rng: np.random.Generator | None = None
    unavailable: set[str] = field(default_factory=set)

    def up(self, rid: str) -> bool:
        if rid in self.unavailable:
            return False
        st = self.statuses.get(rid)
        return st is None or st.state != State.DOWN

    def outage(self, rid: str) -> tuple[int, int] | None:
        st = self.statuses.get(rid)
        if st is not None and st.state == State.DOWN:
            return (self.now, st.down_until)
        return None

    def location_of(self, rid: str) -> str | None:
        m = self.registry[rid]
        return None if m.is_transport else m.site


def priority(entry: ScheduledEvent, weights: tuple[float, float], due: dict[str, int]) -> float:
    w_s, w_d = weights
    return w_s / (entry.start + 1) + w_d / (due.get(entry.product, 0) + 1)


def affected_events(
    rs: ResourceSchedule,
    now: int,
    priority_weights: tuple[float, float] = (1.0, 1.0),
    due: dict[str, int] | None = None,
) -> DisruptionReport:
    due = due or {}
    pending = [e for e in rs.entries if e.end > now]
    pending.sort(key=lambda e: (-priority(e, priority_weights, due), e.start, e.product))
    return DisruptionReport(rs.resource, now, pending)


def replacement_span(
    e_q: ScheduledEvent,
    ps: ProductSchedule,
    disrupted_loc: str | None,
    locked_before: int | None = None,
) -> tuple[list[ScheduledEvent], ProductState, ProductState]:
    """Shortest run around ``e_q`` that must be replaced.

    Walks back over events whose post-state is at the disrupted location
    and forward over events whose pre-state is. Events that started before
    ``locked_before`` are never pulled in.
    """
    entries = ps.entries
    q = next((i for i, e in enumerate(entries) if e is e_q), None)
    if q is None:
        raise EventNotFound(e_q)
    states = ps.states
    lo = hi = q
    if disrupted_loc is not None:
        j = q - 1
        while j >= 0 and states[j + 1].location == disrupted_loc:
            if locked_before is not None and entries[j].start < locked_before:
                break
            lo = j
            j -= 1
        j = q + 1
        while j < len(entries) and states[j].location == disrupted_loc:
            hi = j
            j += 1
    return entries[lo : hi + 1], states[lo], states[hi + 1]


def broadcast_request(req: RepairRequest, cluster: Iterable[str], bus: MessageBus) -> int:
    members = sorted(cluster)
    if not members:
        raise EmptyCluster(f"nobody else can perform {req.affected.event.name}")
    for rid in members:
        bus.send(req.disrupted, rid, "request")
    return len(members)


def notify_sequential_removals(e_q: ScheduledEvent, span: Sequence[ScheduledEvent], bus: MessageBus) -> int:
    n = 0
    for e in span:
        if e is e_q or e.resource == e_q.resource:
            continue
        bus.send(e_q.resource, e.resource, "removal")
        n += 1
    return n


# -- transport legs ------------------------------------------------------

Hop = tuple[str, str, str]  # (robot, from, to)


def _robots_between(ctx: RepairContext, a: str, b: str) -> list[str]:
    return sorted(
        m.resource for m in ctx.registry.robots() if a in m.locations and b in m.locations and ctx.up(m.resource)
    )


def all_paths(ctx: RepairContext, a: str, b: str, max_hops: int) -> list[list[Hop]]:
    """Every robot path a -> b of at most ``max_hops`` moves through transfer points."""
    if a == b:
        return [[]]
    out: list[list[Hop]] = []

    def extend(loc: str, path: list[Hop], seen: set[str]):
        if len(path) >= max_hops:
            return
        for r in _robots_between(ctx, loc, b):
            out.append(path + [(r, loc, b)])
        if len(path) + 1 >= max_hops:
            return
        for m in sorted(ctx.transfer_points - seen - {b}):
            for r in _robots_between(ctx, loc, m):
                extend(m, path + [(r, loc, m)], seen | {m})

    extend(a, [], {a})
    return out


def _leg_search(
    ctx: RepairContext, site: str, far: str, inbound: bool, asker: str, first_ring: list[str]
) -> list[list[Hop]]:
    """Transport options between ``far`` and ``site`` found by asking around.

    The first ring (robots reaching ``site``) was already queried by the
    caller. Only when none of them spans the leg directly is the request
    propagated, one ring per hop, up to ``max_hops`` moves.
    """
    if site == far:
        return [[]]
    direct = [r for r in first_ring if far in ctx.registry[r].locations]
    if direct:
        return [[(r, far, site)] if inbound else [(r, site, far)] for r in direct]
    # propagation: partial paths anchored at ``site`` growing towards ``far``
    frontier: list[tuple[str, str, list[Hop]]] = []  # (robot, anchor, path)
    for r in first_ring:
        frontier.append((r, site, []))
    found: list[list[Hop]] = []
    for _hop in range(1, ctx.max_hops):
        nxt = []
        for r, anchor, path in frontier:
            robot = ctx.registry[r]
            for m in sorted((robot.locations & ctx.transfer_points) - {anchor, far}):
                if any(m in (h[1], h[2]) for h in path):
                    continue
                here = (r, m, anchor) if inbound else (r, anchor, m)
                for r2 in sorted(collaborative_ras(m, r, ctx.registry)):
                    peer = ctx.registry[r2]
                    if not peer.is_transport or not ctx.up(r2):
                        continue
                    ctx.bus.send(r, r2, "request")
                    ctx.bus.send(r2, r, "response")
                    new_path = path + [here]
                    if far in peer.locations:
                        hop = (r2, far, m) if inbound else (r2, m, far)
                        full = new_path + [hop]
                        found.append(list(reversed(full)) if inbound else full)
                    else:
                        nxt.append((r2, m, new_path))
        if found:
            break
        frontier = nxt
    unique = []
    for p in found:
        if p not in unique:
            unique.append(p)
    return unique


# -- timing ---------------------------------------------------------------


class Lane(NamedTuple):
    """Sorted busy spans of one resource as seen by a repair."""

    spans: list[tuple[int, int]]
    refs: list  # the ScheduledEvent behind each span, None when it cannot move
    pinned: frozenset[int]


class Overlay:
    """Per-resource busy spans seen by one repair: the live schedule minus
    the entries being replaced, plus outages of broken machines."""

    def __init__(self, ctx: RepairContext, removed: Iterable[ScheduledEvent]):
        self.ctx = ctx
        self.removed = {id(e) for e in removed}
        self.base: dict[str, Lane] = {}

    def lane(self, rid: str) -> Lane:
        lane = self.base.get(rid)
        if lane is None:
            rs = self.ctx.schedule.resources.get(rid)
            items = [(e.start, e.end, e) for e in (rs.entries if rs else ()) if id(e) not in self.removed]
            out = self.ctx.outage(rid)
            if out is not None:
                items.append((out[0], out[1], None))
            items.sort(key=lambda x: (x[0], x[1]))
            now = self.ctx.now
            refs = [ref if ref is not None and ref.start >= now else None for _, _, ref in items]
            pinned = frozenset(i for i, ref in enumerate(refs) if ref is None)
            lane = self.base[rid] = Lane([(x[0], x[1]) for x in items], refs, pinned)
        return lane


class Chain(NamedTuple):
    edits: dict
    planned: tuple
    shifts: tuple
    terms: tuple
    t: int

    def candidate(self) -> CandidateSchedule:
        return CandidateSchedule(list(self.planned), 0.0, list(self.shifts), list(self.terms))


def extend_chain(ctx: RepairContext, overlay: Overlay, chain: Chain, step) -> Chain | None:
    event, rid, dur = step
    lane = chain.edits.get(rid) or overlay.lane(rid)
    gap = ctx.schedule.gap(rid)
    try:
        slot = earliest_start(lane.spans, chain.t, gap, dur, ctx.horizon, pinned=lane.pinned)
    except NoFeasibleSlot:
        return None
    spans = lane.spans.copy()
    refs = lane.refs.copy()
    shifts = chain.shifts
    if slot.shift is not None:
        j, new_start = slot.shift
        s0, e0 = spans[j]
        spans[j] = (new_start, new_start + (e0 - s0))
        shifts = shifts + ((refs[j], new_start),)
    k = bisect.bisect_left(spans, (slot.start, slot.start + dur))
    spans.insert(k, (slot.start, slot.start + dur))
    refs.insert(k, None)
    pinned = frozenset([i if i < k else i + 1 for i in lane.pinned] + [k])
    edits = dict(chain.edits)
    edits[rid] = Lane(spans, refs, pinned)
    post_len = slot.posterior[1] - slot.posterior[0] if slot.posterior else 0
    term = SlackTerm(rid, slot.start, slot.t_max, slot.boundary, post_len, dur, gap)
    planned = PlannedEvent(event, rid, slot.start, slot.start + dur)
    return Chain(edits, chain.planned + (planned,), shifts, chain.terms + (term,), slot.start + dur)


def run_steps(ctx: RepairContext, overlay: Overlay, chain: Chain | None, steps) -> Chain | None:
    for step in steps:
        if chain is None:
            return None
        chain = extend_chain(ctx, overlay, chain, step)
    return chain


def time_chain(
    ctx: RepairContext,
    overlay: Overlay,
    steps: Sequence[tuple[EventSpec, str, int]],
    t0: int,
) -> CandidateSchedule | None:
    """Place each step at its earliest start after the previous one ends."""
    chain = run_steps(ctx, overlay, Chain({}, (), (), (), t0), steps)
    return None if chain is None else chain.candidate()


def hop_steps(ctx: RepairContext, path: list[Hop]) -> list[tuple[EventSpec, str, int]]:
    out = []
    for r, a, b in path:
        ev = EventSpec.transport(a, b)
        out.append((ev, r, ctx.registry[r].nominal_cost[ev.name]))
    return out


def removed_for(ctx: RepairContext, req: RepairRequest) -> list[ScheduledEvent]:
    """The span plus the product's own downstream entries (re-timed at commit)."""
    ps = ctx.schedule.products[req.product]
    last = ps.index(req.span[-1])
    return list(req.span) + ps.entries[last + 1 :]


def check_candidate(req: RepairRequest, cand: CandidateSchedule) -> bool:
    try:
        if apply_sequence(req.x_prior, [p.event for p in cand.events]) != req.x_post:
            return False
    except InapplicableEvent:
        return False
    return all(a.end <= b.start for a, b in zip(cand.events, cand.events[1:]))


def host_allowed(host: CapabilityModel, req: RepairRequest) -> bool:
    """A host may not sit at either end of the span: a product never does two
    consecutive operations at one machine, so every span holds one visit."""
    if not req.transforms:
        return True
    return host.site not in (req.x_prior.location, req.x_post.location)


def build_candidates(
    ctx: RepairContext,
    host: CapabilityModel,
    req: RepairRequest,
    legs_in: list[list[Hop]],
    legs_out: list[list[Hop]],
    penalty: float = 0.0,
    overlay: Overlay | None = None,
) -> list[CandidateSchedule]:
    """Timed candidates for every (inbound leg, outbound leg) pair at ``host``.

    The timed prefix up to the last transform is shared by all outbound legs.
    """
    if not host_allowed(host, req):
        return []
    overlay = overlay or Overlay(ctx, removed_for(ctx, req))
    middle = [(ev.at(host.site), host.resource, host.nominal_cost[ev.name]) for ev in req.transforms]
    out = []
    seen = set()
    start = Chain({}, (), (), (), req.requested_time)
    for p_in in legs_in:
        key_in = tuple(p_in)
        if key_in in seen:
            continue
        seen.add(key_in)
        head = run_steps(ctx, overlay, start, hop_steps(ctx, p_in) + middle)
        if head is None:
            continue
        tails = set()
        for p_out in legs_out:
            if tuple(p_out) in tails:
                continue
            tails.add(tuple(p_out))
            chain = run_steps(ctx, overlay, head, hop_steps(ctx, p_out))
            if chain is None or not chain.planned:
                continue
            cand = chain.candidate()
            if check_candidate(req, cand):
                cand.penalty = penalty
                out.append(cand)
    return out


def generate_candidate(
    bidder: CapabilityModel,
    req: RepairRequest,
    ctx: RepairContext,
    penalty: float = 0.0,
    overlay: Overlay | None = None,
) -> tuple[list[CandidateSchedule], int]:
    """Candidates a single bidder can offer, and the messages it spent."""
    before = ctx.bus.count
    if bidder.is_transport:
        ev = EventSpec.transport(req.x_prior.location, req.x_post.location)
        if ev.name not in bidder.events:
            return [], 0
        overlay = overlay or Overlay(ctx, removed_for(ctx, req))
        cand = time_chain(ctx, overlay, [(ev, bidder.resource, bidder.nominal_cost[ev.name])], req.requested_time)
        if cand is None or not check_candidate(req, cand):
            return [], 0
        cand.penalty = penalty
        return [cand], 0
    if any(ev.name not in bidder.events for ev in req.transforms) or not host_allowed(bidder, req):
        return [], 0
    site = bidder.site
    ring = []
    if site != req.x_prior.location or site != req.x_post.location:
        ctx.bus.query(bidder.resource)
        for r in sorted(collaborative_ras(site, bidder.resource, ctx.registry)):
            if ctx.up(r):
                ctx.bus.send(bidder.resource, r, "request")
                ctx.bus.send(r, bidder.resource, "response")
                ring.append(r)
    legs_in = _leg_search(ctx, site, req.x_prior.location, True, bidder.resource, ring)
    legs_out = _leg_search(ctx, site, req.x_post.location, False, bidder.resource, ring)
    cands = build_candidates(ctx, bidder, req, legs_in, legs_out, penalty, overlay)
    return cands, ctx.bus.count - before


def make_request(
    ctx: RepairContext, e_q: ScheduledEvent, disrupted: str
) -> RepairRequest:
    ps = ctx.schedule.products[e_q.product]
    loc = ctx.location_of(disrupted)
    span, x_prior, x_post = replacement_span(e_q, ps, loc, locked_before=ctx.now)
    i = ps.index(span[0])
    ready = ps.entries[i - 1].end if i > 0 else ctx.release.get(e_q.product, 0)
    return RepairRequest(
        affected=e_q,
        requirements=ctx.requirements.get(e_q.product, Requirements()),
        x_prior=x_prior,
        x_post=x_post,
        product=e_q.product,
        requested_time=max(ctx.now, ready),
        span=list(span),
        disrupted=disrupted,
    )


# -- commit ---------------------------------------------------------------


def _busy(ctx: RepairContext, rid: str, exclude: ScheduledEvent | None = None) -> list[tuple[int, int]]:
    rs = ctx.schedule.resources.get(rid)
    spans = [e.span() for e in (rs.entries if rs else ()) if e is not exclude]
    out = ctx.outage(rid)
    if out is not None:
        spans.append(out)
    return sorted(spans)


def reinsert_chain(ctx: RepairContext, pid: str, chain: list[ScheduledEvent], ready: int) -> None:
    """Put previously removed entries of one product back, in order, each at
    its first free gap no earlier than its old start."""
    sched = ctx.schedule
    for e in chain:
        t = max(e.start, ready)
        s = first_fit(_busy(ctx, e.resource), t, sched.gap(e.resource), e.duration)
        sched.shift(e, s)
        sched.add(e)
        ready = e.end


def retime_after(ctx: RepairContext, entry: ScheduledEvent) -> None:
    """Re-time the rest of ``entry``'s product if ``entry`` now ends too late."""
    sched = ctx.schedule
    ps = sched.products[entry.product]
    i = ps.index(entry)
    rest = ps.entries[i + 1 :]
    if not rest or rest[0].start >= entry.end:
        return
    for e in rest:
        sched.remove(e)
    reinsert_chain(ctx, entry.product, rest, entry.end)


def commit_candidate(ctx: RepairContext, req: RepairRequest, cand: CandidateSchedule) -> list[ScheduledEvent]:
    sched = ctx.schedule
    removed = removed_for(ctx, req)
    downstream = removed[len(req.span) :]
    for e in removed:
        sched.remove(e)
    for entry, new_start in cand.shifts:
        sched.shift(entry, new_start)
    added = []
    for p in cand.events:
        added.append(sched.add(ScheduledEvent(p.event, req.product, p.resource, p.start, p.end)))
    touched = {req.product}
    for entry, _ in cand.shifts:
        retime_after(ctx, entry)
        touched.add(entry.product)
    reinsert_chain(ctx, req.product, downstream, added[-1].end)
    for pid in touched:
        sched.recompute_holds(pid)
    return added


def defer_to_repair(ctx: RepairContext, e_q: ScheduledEvent) -> None:
    """Leave the event on its broken resource, after the repair completes."""
    sched = ctx.schedule
    ps = sched.products[e_q.product]
    i = ps.index(e_q)
    chain = ps.entries[i:]
    ready = ps.entries[i - 1].end if i > 0 else ctx.release.get(e_q.product, 0)
    for e in chain:
        sched.remove(e)
    reinsert_chain(ctx, e_q.product, chain, max(ready, ctx.now))
    sched.recompute_holds(e_q.product)
