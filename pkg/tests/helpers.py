"""Small hand-built cells shared by several test modules."""

from __future__ import annotations

from fabresched.capability import TRANSFORMATION, CapabilityModel, Directory, Requirements, ResourceStatus, State
from fabresched.protocol import RepairContext
from fabresched.schedule import EventSpec, ProductionSchedule, ProductState, ScheduledEvent


def machine(rid: str, procs=("P1",), cost: int = 10) -> CapabilityModel:
    return CapabilityModel(rid, TRANSFORMATION, {rid}, set(procs), {p: cost for p in procs})


def cell_ctx(machines=None, robots=None, now: int = 0, down_until: int = 500) -> RepairContext:
    """Product A: Entry -> M1, P1 at M1, M1 -> Exit; M1 broken at ``now``."""
    machines = machines if machines is not None else [machine("M1"), machine("M2")]
    robots = robots if robots is not None else [CapabilityModel.robot("R1", {"Entry", "Exit", "M1", "M2"}, 5)]
    reg = Directory(machines + robots)
    sched = ProductionSchedule({m.resource: 2 for m in machines})
    for r in robots:
        sched.add_resource(r.resource)
    sched.add_product("A", ProductState("Entry", "raw"))
    for ev, rid, s, e in [
        (EventSpec.transport("Entry", "M1"), "R1", 0, 5),
        (EventSpec.transform("P1", "M1", "raw", "p1"), "M1", 5, 15),
        (EventSpec.transport("M1", "Exit"), "R1", 15, 20),
    ]:
        sched.add(ScheduledEvent(ev, "A", rid, s, e))
    sched.recompute_holds("A")
    statuses = {m.resource: ResourceStatus(nominal_ops=10) for m in machines}
    statuses["M1"] = ResourceStatus(State.DOWN, down_until, 0, 10)
    ctx = RepairContext(
        sched, reg, statuses, now, 10_000, 2, frozenset({"Entry", "Exit"}), {"A": Requirements()}, {"A": 0}
    )
    ctx.unavailable.add("M1")
    return ctx
