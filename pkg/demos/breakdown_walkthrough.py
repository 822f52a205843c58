"""One machine breaks on a Mini-Fab schedule; watch both repair modes handle it."""

from __future__ import annotations

from fabresched.capability import ResourceStatus, State
from fabresched.decide import Objective, handle_disruption
from fabresched.protocol import RepairContext, affected_events
from fabresched.scenario import build_minifab
from fabresched.schedule import validate_production_schedule
from fabresched.sim import generate_initial_schedule

NOW, BROKEN, BACK_AT = 2000, "M07", 3500


def context(sc, sched):
    reg = sc.directory()
    statuses = {m.resource: ResourceStatus(nominal_ops=30) for m in reg.machines()}
    statuses[BROKEN] = ResourceStatus(State.DOWN, BACK_AT, 0, 30)
    arrivals = {pid: t for pid, _, t in sc.product_list()}
    return RepairContext(
        sched, reg, statuses, NOW, sc.horizon, sc.delta, sc.transfer_points(), sc.requirements(), arrivals
    )


def main():
    sc = build_minifab()
    base, util = generate_initial_schedule(sc)
    print(f"initial schedule: {len(base.entries())} entries, machine utilization {util:.2f}")
    for mode in ("distributed", "centralized"):
        sched = base.copy()
        ctx = context(sc, sched)
        report = affected_events(sched.resources[BROKEN], NOW)
        print(f"\n{mode}: {BROKEN} down at t={NOW}, {len(report.affected)} operations affected")
        for o in handle_disruption(ctx, report, Objective(), mode):
            c = o.decision.chosen
            route = " -> ".join(f"{p.resource}[{p.start},{p.end})" for p in c.events) if c else "deferred"
            print(f"  {o.entry.product:>5} {o.entry.event.name}: J={o.decision.j_value:.0f} msgs={o.messages:4d} {route}")
        print(f"  schedule valid: {validate_production_schedule(sched, ctx.registry.sites()) == []}")


if __name__ == "__main__":
    main()
