"""Resource capability models, the shared capability directory and
requirement match-making."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .schedule import ProductSchedule, ScheduledEvent

TRANSFORMATION = "transformation"
TRANSPORTATION = "transportation"


class State(str, Enum):
    IDLE = "Idle"
    UP = "Up"
    DOWN = "Down"


class EventNotFound(KeyError):
    pass


class InvalidNominalOps(ValueError):
    pass


@dataclass
class CapabilityModel:
    resource: str
    klass: str
    locations: frozenset[str]
    events: frozenset[str]
    nominal_cost: dict[str, int]
    attributes: dict[str, dict[str, object]] = field(default_factory=dict)

    def __post_init__(self):
        self.locations = frozenset(self.locations)
        self.events = frozenset(self.events)
        for ev in self.events:
            if self.nominal_cost.get(ev, 0) <= 0:
                raise ValueError(f"{self.resource}: event {ev} needs a positive nominal cost")

    @property
    def is_transport(self) -> bool:
        return self.klass == TRANSPORTATION

    @property
    def site(self) -> str:
        """The single location of a transformation resource."""
        (loc,) = self.locations
        return loc

    def attrs(self, event: str) -> dict[str, object]:
        return self.attributes.get(event, {})

    @classmethod
    def robot(cls, resource: str, locations: Iterable[str], move_cost: int) -> CapabilityModel:
        locs = frozenset(locations)
        events = frozenset(f"move:{a}->{b}" for a in locs for b in locs if a != b)
        return cls(resource, TRANSPORTATION, locs, events, {e: move_cost for e in events})


@dataclass
class ResourceStatus:
    state: State = State.IDLE
    down_until: int | None = None
    op_count: int = 0
    nominal_ops: int = 1

    def __post_init__(self):
        if (self.state == State.DOWN) != (self.down_until is not None):
            raise ValueError("down_until must be set exactly when the resource is Down")
        if self.op_count < 0:
            raise ValueError("op_count must be non-negative")

    def break_down(self, until: int) -> None:
        self.state = State.DOWN
        self.down_until = until

    def repair(self) -> None:
        self.state = State.IDLE
        self.down_until = None
        self.op_count = 0


_OPS = {"==": operator.eq, "<=": operator.le, ">=": operator.ge}


@dataclass(frozen=True)
class Requirement:
    """``attribute op value``; symbolic values only support ``==``."""

    name: str
    op: str
    value: object

    def violation(self, have: object) -> float:
        """0 when met, the numeric shortfall otherwise (INF for unmeasurable misses)."""
        if have is None:
            return float("inf")
        if _OPS[self.op](have, self.value):
            return 0.0
        if self.op == "==" or not isinstance(have, (int, float)):
            return float("inf")
        return abs(float(have) - float(self.value))


@dataclass(frozen=True)
class SoftRequirement:
    requirement: Requirement
    tolerance: float
    rate: float  # penalty per unit of violation


@dataclass(frozen=True)
class Requirements:
    hard: tuple[Requirement, ...] = ()
    soft: tuple[SoftRequirement, ...] = ()

    def __post_init__(self):
        hard = {r.name for r in self.hard}
        if hard & {s.requirement.name for s in self.soft}:
            raise ValueError("an attribute cannot be both a hard and a soft requirement")


@dataclass(frozen=True)
class Match:
    accepted: bool
    penalty: float = 0.0


REJECT = Match(False)


def match_requirements(event: str, req: Requirements, candidate: CapabilityModel) -> Match:
    if event not in candidate.events:
        return REJECT
    attrs = candidate.attrs(event)
    for r in req.hard:
        if r.violation(attrs.get(r.name)) > 0:
            return REJECT
    penalty = 0.0
    for s in req.soft:
        v = s.requirement.violation(attrs.get(s.requirement.name))
        if v > s.tolerance:
            return REJECT
        penalty += v * s.rate
    return Match(True, penalty)


class Directory:
    """Read-only capability directory shared by all agents."""

    def __init__(self, models: Iterable[CapabilityModel]):
        self.models: dict[str, CapabilityModel] = {m.resource: m for m in models}

    def __getitem__(self, rid: str) -> CapabilityModel:
        return self.models[rid]

    def __iter__(self):
        return iter(self.models.values())

    def __len__(self) -> int:
        return len(self.models)

    def sites(self) -> dict[str, frozenset[str]]:
        return {rid: m.locations for rid, m in self.models.items()}

    def robots(self) -> list[CapabilityModel]:
        return [m for m in self if m.is_transport]

    def machines(self) -> list[CapabilityModel]:
        return [m for m in self if not m.is_transport]


def clustering_ras(event: str, self_id: str, registry: Directory) -> set[str]:
    return {m.resource for m in registry if event in m.events and m.resource != self_id}


def sequential_ras(entry: ScheduledEvent, product_schedule: ProductSchedule) -> set[str]:
    lst = product_schedule.entries
    for q, e in enumerate(lst):
        if e is entry:
            return {lst[k].resource for k in (q - 1, q + 1) if 0 <= k < len(lst)}
    raise EventNotFound(entry)


def collaborative_ras(location: str, self_id: str, registry: Directory) -> set[str]:
    me = registry[self_id]
    out = set()
    for m in registry:
        if m.resource == self_id or location not in m.locations:
            continue
        if not me.is_transport and not m.is_transport:
            continue
        out.add(m.resource)
    return out


def workspace_requirements(size: str) -> Requirements:
    """Large products need a large workspace; small ones fit anywhere."""
    if size == "L":
        return Requirements(hard=(Requirement("workspace", "==", "L"),))
    return Requirements()


def statuses_up(statuses: Mapping[str, ResourceStatus], rid: str) -> bool:
    st = statuses.get(rid)
    return st is None or st.state != State.DOWN
