"""Production schedule model, state transitions and idle-interval arithmetic.

Time is measured in integer ticks. A product's schedule is a chain of
events that drives its state from ``x0`` to its final state; a resource's
schedule is the time-ordered list of events it performs. Both views share
the same :class:`ScheduledEvent` objects inside a :class:`ProductionSchedule`.
"""

from __future__ import annotations

import bisect
import math
from operator import itemgetter
from dataclasses import dataclass, field
from typing import Container, Iterable, NamedTuple, Sequence

TRANSPORT = "transport"
TRANSFORM = "transform"

INF = math.inf


class InapplicableEvent(ValueError):
    """Raised when an event cannot be applied to a product state."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class NoFeasibleSlot(ValueError):
    """No idle window admits the insertion under the one-shift rule."""


@dataclass(frozen=True, order=True)
class ProductState:
    location: str
    composition: str

    def __str__(self) -> str:
        return f"({self.location}, {self.composition})"


@dataclass(frozen=True)
class EventSpec:
    """An operation on a product.

    ``name`` is the capability key shared by every resource able to perform
    the operation: the process name for transforms, ``move:A->B`` for
    transports. For a transport ``src``/``dst`` are locations; for a
    transform they are the pre/post compositions and ``location`` is the
    site where it happens.
    """

    name: str
    kind: str
    src: str
    dst: str
    location: str | None = None

    @classmethod
    def transport(cls, frm: str, to: str) -> EventSpec:
        return cls(f"move:{frm}->{to}", TRANSPORT, frm, to)

    @classmethod
    def transform(cls, process: str, location: str, pre: str, post: str) -> EventSpec:
        return cls(process, TRANSFORM, pre, post, location)

    @property
    def is_transport(self) -> bool:
        return self.kind == TRANSPORT

    def at(self, location: str) -> EventSpec:
        """The same transform performed at another site."""
        if self.is_transport:
            raise ValueError("transport events have no site")
        return EventSpec(self.name, self.kind, self.src, self.dst, location)

    def __str__(self) -> str:
        if self.is_transport:
            return f"move {self.src}->{self.dst}"
        return f"{self.name}@{self.location} {self.src}->{self.dst}"


def apply_transition(state: ProductState, event: EventSpec) -> ProductState:
    if event.is_transport:
        if state.location != event.src:
            raise InapplicableEvent(f"{event} needs product at {event.src}, it is at {state.location}")
        return ProductState(event.dst, state.composition)
    if state.location != event.location:
        raise InapplicableEvent(f"{event} needs product at {event.location}, it is at {state.location}")
    if state.composition != event.src:
        raise InapplicableEvent(f"{event} needs composition {event.src}, product has {state.composition}")
    return ProductState(state.location, event.dst)


def apply_sequence(state: ProductState, seq: Iterable[EventSpec]) -> ProductState:
    for i, event in enumerate(seq):
        try:
            state = apply_transition(state, event)
        except InapplicableEvent as exc:
            raise InapplicableEvent(f"event {i}: {exc}", index=i) from None
    return state


@dataclass(eq=False)
class ScheduledEvent:
    """One event bound to a product, a resource and a time span.

    ``hold`` is how long the product stays in the resulting state (waiting in
    the local buffer) before its next event starts.
    """

    event: EventSpec
    product: str
    resource: str
    start: int
    end: int
    hold: int = 0

    @property
    def duration(self) -> int:
        return self.end - self.start

    @property
    def release(self) -> int:
        return self.end + self.hold

    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def __repr__(self) -> str:
        return f"<{self.event} p={self.product} r={self.resource} [{self.start},{self.end}]>"


def _start_key(e: ScheduledEvent) -> tuple[int, int]:
    return (e.start, e.end)


@dataclass
class ResourceSchedule:
    resource: str
    entries: list[ScheduledEvent] = field(default_factory=list)
    gap: int = 0  # minimum idle time between consecutive entries (delta on machines)

    def spans(self, exclude: Iterable[ScheduledEvent] = ()) -> list[tuple[int, int]]:
        skip = {id(e) for e in exclude}
        return [e.span() for e in self.entries if id(e) not in skip]


@dataclass
class ProductSchedule:
    product: str
    x0: ProductState
    entries: list[ScheduledEvent] = field(default_factory=list)

    @property
    def states(self) -> list[ProductState]:
        out = [self.x0]
        for e in self.entries:
            out.append(apply_transition(out[-1], e.event))
        return out

    def index(self, entry: ScheduledEvent) -> int:
        for i, e in enumerate(self.entries):
            if e is entry:
                return i
        raise KeyError(entry)


class IdleInterval(NamedTuple):
    lo: int
    hi: int


def _as_spans(busy) -> list[tuple[int, int]]:
    if isinstance(busy, ResourceSchedule):
        return busy.spans()
    return sorted((int(s), int(e)) for s, e in busy)


def idle_intervals(busy, horizon: int, start_from: int = 0) -> list[IdleInterval]:
    """Complement of the busy spans within ``[start_from, horizon]``."""
    if start_from > horizon:
        raise ValueError("start_from must not exceed horizon")
    out = []
    cursor = start_from
    for s, e in _as_spans(busy):
        if e <= cursor:
            continue
        if s > cursor:
            out.append(IdleInterval(cursor, min(s, horizon)))
        cursor = max(cursor, e)
        if cursor >= horizon:
            break
    if cursor < horizon:
        out.append(IdleInterval(cursor, horizon))
    return [iv for iv in out if iv.lo < iv.hi]


class Slot(NamedTuple):
    start: int
    shift: tuple[int, int] | None  # (index into the sorted busy spans, new start)
    t_max: float  # latest feasible start in the chosen window, INF if unbounded
    boundary: float  # start of the event after the shifted one (or horizon), INF if none
    posterior: tuple[int, int] | None  # span of the first posterior event, if any


def earliest_start(
    busy: Sequence[tuple[int, int]],
    t: int,
    delta: int,
    dur: int,
    horizon: int,
    start_from: int = 0,
    pinned: Container[int] = (),
) -> Slot:
    """Earliest start >= t for a new event of length ``dur``.

    At most one posterior event may be pushed back, by the minimal amount
    (to ``start + dur + delta``), and every event keeps a ``delta`` gap to
    its neighbours. The window after the last busy span is unbounded.
    Spans whose sorted index is in ``pinned`` can never be pushed.
    """
    if dur <= 0:
        raise ValueError("dur must be positive")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    spans = busy.spans() if isinstance(busy, ResourceSchedule) else sorted(busy)
    n = len(spans)
    # spans starting before t can only be priors
    j0 = bisect.bisect_left(spans, (t, -INF))
    prior_end = max(start_from, max(map(itemgetter(1), spans[:j0]), default=start_from))
    for j in range(j0, n + 1):
        if j < n and spans[j][0] < start_from:
            prior_end = max(prior_end, spans[j][1])
            continue
        s = max(t, prior_end + delta)
        if j == n:
            return Slot(s, None, INF, INF, None)
        p_start, p_end = spans[j]
        prior_end = max(prior_end, p_end)
        if s > p_start:
            continue
        boundary = spans[j + 1][0] if j + 1 < n else horizon
        t_max = boundary - delta - (p_end - p_start) - delta - dur
        if s + dur + delta <= p_start:
            return Slot(s, None, t_max, boundary, (p_start, p_end))
        if s <= t_max and j not in pinned:
            return Slot(s, (j, s + dur + delta), t_max, boundary, (p_start, p_end))
    raise NoFeasibleSlot(f"no window admits an event of {dur} ticks from t={t}")


def first_fit(busy: Sequence[tuple[int, int]], t: int, delta: int, dur: int) -> int:
    """Earliest start >= t that fits into an idle gap without moving anything."""
    s = t
    for b_start, b_end in _as_spans(busy):
        if b_end + delta <= s:
            continue
        if s + dur + delta <= b_start:
            return s
        s = max(s, b_end + delta)
    return s


@dataclass
class Violation:
    kind: str
    detail: str


class ProductionSchedule:
    """All resource and product schedules, sharing entry objects."""

    def __init__(self, gaps: dict[str, int] | None = None):
        self.resources: dict[str, ResourceSchedule] = {}
        self.products: dict[str, ProductSchedule] = {}
        for rid, gap in (gaps or {}).items():
            self.add_resource(rid, gap)

    def add_resource(self, rid: str, gap: int = 0) -> ResourceSchedule:
        rs = self.resources.get(rid)
        if rs is None:
            rs = self.resources[rid] = ResourceSchedule(rid, gap=gap)
        return rs

    def add_product(self, pid: str, x0: ProductState) -> ProductSchedule:
        ps = self.products.get(pid)
        if ps is None:
            ps = self.products[pid] = ProductSchedule(pid, x0)
        return ps

    def add(self, entry: ScheduledEvent) -> ScheduledEvent:
        rs = self.add_resource(entry.resource)
        bisect.insort(rs.entries, entry, key=_start_key)
        ps = self.products[entry.product]
        bisect.insort(ps.entries, entry, key=_start_key)
        return entry

    def remove(self, entry: ScheduledEvent) -> None:
        for lst in (self.resources[entry.resource].entries, self.products[entry.product].entries):
            for i, e in enumerate(lst):
                if e is entry:
                    del lst[i]
                    break

    def entries(self) -> list[ScheduledEvent]:
        return [e for ps in self.products.values() for e in ps.entries]

    def gap(self, rid: str) -> int:
        rs = self.resources.get(rid)
        return rs.gap if rs else 0

    def _neighbour(self, lst: list[ScheduledEvent], entry: ScheduledEvent, step: int):
        for i, e in enumerate(lst):
            if e is entry:
                j = i + step
                return lst[j] if 0 <= j < len(lst) else None
        raise KeyError(entry)

    def next_on_resource(self, entry):
        return self._neighbour(self.resources[entry.resource].entries, entry, 1)

    def prev_on_resource(self, entry):
        return self._neighbour(self.resources[entry.resource].entries, entry, -1)

    def next_of_product(self, entry):
        return self._neighbour(self.products[entry.product].entries, entry, 1)

    def prev_of_product(self, entry):
        return self._neighbour(self.products[entry.product].entries, entry, -1)

    def shift(self, entry: ScheduledEvent, new_start: int) -> None:
        """Move an entry in time keeping its duration; list order must be preserved by the caller."""
        d = entry.duration
        entry.start = new_start
        entry.end = new_start + d

    def recompute_holds(self, pid: str) -> None:
        lst = self.products[pid].entries
        for a, b in zip(lst, lst[1:]):
            a.hold = b.start - a.end
        if lst:
            lst[-1].hold = 0

    def propagate(self, changed: Iterable[ScheduledEvent]) -> set[str]:
        """Push successors right until precedence and resource gaps hold again.

        Only ever delays entries, so the combined product/resource order
        stays acyclic. Returns the products whose timelines were touched.
        """
        work = list(changed)
        touched = {e.product for e in work}
        while work:
            e = work.pop()
            for succ, need in (
                (self.next_of_product(e), e.end),
                (self.next_on_resource(e), e.end + self.gap(e.resource)),
            ):
                if succ is not None and succ.start < need:
                    self.shift(succ, need)
                    touched.add(succ.product)
                    work.append(succ)
        for pid in touched:
            self.recompute_holds(pid)
        return touched

    def copy(self) -> ProductionSchedule:
        out = ProductionSchedule()
        for rid, rs in self.resources.items():
            out.add_resource(rid, rs.gap)
        clones = {}
        for pid, ps in self.products.items():
            nps = out.add_product(pid, ps.x0)
            for e in ps.entries:
                c = ScheduledEvent(e.event, e.product, e.resource, e.start, e.end, e.hold)
                clones[id(e)] = c
                nps.entries.append(c)
        for rid, rs in self.resources.items():
            out.resources[rid].entries = [clones[id(e)] for e in rs.entries]
        return out


def validate_production_schedule(
    schedule: ProductionSchedule,
    sites: dict[str, frozenset[str]] | None = None,
) -> list[Violation]:
    """Every invariant violation in the schedule; an empty list means valid.

    ``sites`` optionally maps resources to the locations they may act at,
    which additionally checks transforms happen where their resource is.
    """
    out: list[Violation] = []
    in_products = set()
    for pid, ps in schedule.products.items():
        lst = ps.entries
        for e in lst:
            in_products.add(id(e))
            if e.start >= e.end:
                out.append(Violation("duration", f"{e!r} has non-positive duration"))
            if sites is not None and not e.event.is_transport:
                if e.event.location not in sites.get(e.resource, ()):
                    out.append(Violation("site", f"{e!r} is not at a location of {e.resource}"))
        for a, b in zip(lst, lst[1:]):
            if a.release < b.start:
                out.append(Violation("timeline-gap", f"{pid}: {a!r} released at {a.release}, next starts {b.start}"))
            elif a.release > b.start:
                out.append(Violation("timeline-overlap", f"{pid}: {a!r} released at {a.release}, next starts {b.start}"))
        try:
            apply_sequence(ps.x0, [e.event for e in lst])
        except InapplicableEvent as exc:
            out.append(Violation("transition", f"{pid}: {exc}"))
    in_resources = set()
    for rid, rs in schedule.resources.items():
        for e in rs.entries:
            in_resources.add(id(e))
            if e.resource != rid:
                out.append(Violation("orphan", f"{e!r} listed under {rid}"))
        ordered = sorted(rs.entries, key=_start_key)
        for a, b in zip(ordered, ordered[1:]):
            if b.start < a.end:
                out.append(Violation("overlap", f"{rid}: {a!r} overlaps {b!r}"))
            elif b.start - a.end < rs.gap:
                out.append(Violation("gap", f"{rid}: only {b.start - a.end} ticks between {a!r} and {b!r}"))
    if in_products != in_resources:
        out.append(Violation("orphan", "product and resource views hold different entries"))
    return out
