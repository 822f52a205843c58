"""Tick-based discrete-event execution of a production schedule with
stochastic durations, machine breakdowns and on-line repair."""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .bus import MessageBus
from .capability import ResourceStatus, State
from .decide import Objective, RepairOutcome, handle_disruption
from .protocol import RepairContext, affected_events
from .risk import RiskWeights, truncated_normal
from .scenario import Scenario
from .schedule import (
    EventSpec,
    ProductionSchedule,
    ProductState,
    ScheduledEvent,
    first_fit,
    validate_production_schedule,
)


class InfeasibleScenario(RuntimeError):
    pass


RAW = "raw"


# -- initial schedule -------------------------------------------------------


def utilization(schedule: ProductionSchedule, machines: list[str]) -> float:
    entries = [e for m in machines for e in schedule.resources[m].entries]
    if not entries:
        return 0.0
    lo = min(e.start for e in schedule.entries())
    hi = max(e.end for e in schedule.entries())
    busy = sum(e.duration for e in entries)
    return busy / (len(machines) * (hi - lo))


def generate_initial_schedule(scenario: Scenario, target_utilization: float | None = None, tol: float = 0.02):
    """Greedy list scheduling in arrival order.

    Each route step goes to the (machine, robot) pair that finishes it
    earliest. Machines reserve ``k * dur`` extra ticks after every
    operation while the plan is built, which spreads the load; ``k`` is
    bisected until the finished schedule is within ``tol`` of the target
    utilization (or the closest attempt is returned).
    Returns ``(schedule, utilization)``.
    """
    target = target_utilization or scenario.target_utilization
    lo, hi = 0.0, 2.0 * (1.0 / target - 1.0) + 0.5
    best = None
    for _ in range(12):
        k = (lo + hi) / 2
        sched, util = _greedy(scenario, k)
        if best is None or abs(util - target) < abs(best[1] - target):
            best = (sched, util)
        if abs(util - target) <= tol:
            break
        if util > target:
            lo = k
        else:
            hi = k
    return best


def _greedy(scenario: Scenario, pad_factor: float):
    reg = scenario.directory()
    delta = scenario.delta
    sched = ProductionSchedule()
    machines = sorted(m.resource for m in reg.machines())
    robots = sorted(r.resource for r in reg.robots())
    for m in machines:
        sched.add_resource(m, delta)
    for r in robots:
        sched.add_resource(r, 0)
    reserved = {m: [] for m in machines}  # padded spans used only while planning
    busy_r = {r: [] for r in robots}
    reqs = scenario.requirements()

    def direct(a: str, b: str) -> list[str]:
        return [r for r in robots if a in reg[r].locations and b in reg[r].locations]

    def place_move(pid, loc, dest, t):
        best = None
        for r in direct(loc, dest):
            move = reg[r].nominal_cost[f"move:{loc}->{dest}"]
            ts = first_fit(busy_r[r], t, 0, move)
            if best is None or ts + move < best[0]:
                best = (ts + move, r, ts, move)
        return best

    for pid, ptype, arrival in scenario.product_list():
        x = ProductState(scenario.entry, RAW)
        sched.add_product(pid, x)
        t = arrival
        prev_machine = None
        for proc in ptype.route:
            best = None
            for mid in machines:
                model = reg[mid]
                if proc not in model.events or mid == prev_machine:
                    continue
                ws = model.attrs(proc).get("workspace")
                if any(r.violation(ws) > 0 for r in reqs[pid].hard):
                    continue
                dur = model.nominal_cost[proc]
                pad = int(round(dur * pad_factor))
                for r in direct(x.location, mid):
                    move = reg[r].nominal_cost[f"move:{x.location}->{mid}"]
                    s = first_fit(reserved[mid], t + move, delta, dur + pad)
                    ts = first_fit(busy_r[r], max(t, s - move), 0, move)
                    if ts + move > s:
                        s = first_fit(reserved[mid], ts + move, delta, dur + pad)
                    key = (s + dur, mid, r)
                    if best is None or key < best[0]:
                        best = (key, mid, r, ts, move, s, dur, pad)
            if best is None:
                raise InfeasibleScenario(f"{pid}: no reachable machine for {proc}")
            _, mid, r, ts, move, s, dur, pad = best
            mv = EventSpec.transport(x.location, mid)
            sched.add(ScheduledEvent(mv, pid, r, ts, ts + move))
            busy_r[r].append((ts, ts + move))
            busy_r[r].sort()
            comp = proc if x.composition == RAW else f"{x.composition}+{proc}"
            ev = EventSpec.transform(proc, mid, x.composition, comp)
            sched.add(ScheduledEvent(ev, pid, mid, s, s + dur))
            reserved[mid].append((s, s + dur + pad))
            reserved[mid].sort()
            x = ProductState(mid, comp)
            t = s + dur
            prev_machine = mid
        out = place_move(pid, x.location, scenario.exit, t)
        if out is None:
            raise InfeasibleScenario(f"{pid}: cannot reach {scenario.exit}")
        _, r, ts, move = out
        sched.add(ScheduledEvent(EventSpec.transport(x.location, scenario.exit), pid, r, ts, ts + move))
        busy_r[r].append((ts, ts + move))
        busy_r[r].sort()
        sched.recompute_holds(pid)
    bad = validate_production_schedule(sched, reg.sites())
    if bad:
        raise InfeasibleScenario(f"generated schedule is invalid: {bad[0].detail}")
    return sched, utilization(sched, machines)


# -- stochastic models ------------------------------------------------------


def sample_duration(nominal: int, sigma_frac: float, rng: np.random.Generator) -> int:
    if nominal <= 0:
        raise ValueError("nominal must be positive")
    if sigma_frac <= 0:
        return int(nominal)
    x = truncated_normal(rng, nominal, sigma_frac * nominal, 1)[0]
    return max(1, int(round(x)))


@dataclass
class MachineRuntime:
    status: ResourceStatus
    base_hazard: float
    rng: np.random.Generator
    mttr: tuple[int, int] = (1000, 1500)

    def __post_init__(self):
        if not 0.033 - 1e-12 <= self.base_hazard <= 0.10 + 1e-12:
            raise ValueError("base_hazard must lie in [0.033, 0.10]")

    def hazard(self, max_p: float = 0.5) -> float:
        st = self.status
        return min(max_p, self.base_hazard * st.op_count / st.nominal_ops)


def sample_breakdown(
    machine: MachineRuntime,
    context: str,
    rng: np.random.Generator | None = None,
    now: int = 0,
    idle_factor: float = 20.0,
    max_p: float = 0.5,
) -> bool:
    """Draw a breakdown; on failure the machine goes Down until now + MTTR."""
    rng = rng if rng is not None else machine.rng
    p = machine.hazard(max_p)
    if context == "idle-checkpoint":
        p /= idle_factor
    elif context != "operation-start":
        raise ValueError(f"unknown breakdown context {context!r}")
    if p <= 0 or rng.random() >= p:
        return False
    lo, hi = machine.mttr
    machine.status.break_down(now + int(rng.integers(lo, hi + 1)))
    return True


# -- metrics ----------------------------------------------------------------


@dataclass
class TrialMetrics:
    """One CSV row. Wall-clock time is kept out so rows are reproducible."""

    trial: int
    seed: int
    mode: str
    risk: str
    products: int
    exited: int
    damaged: int
    broken: int
    rescheduled: int
    total_processes: int
    communications: int
    rescheduling_events: int
    escalations: int
    deferred: int
    mean_cycle: float
    max_cycle: int
    makespan: int
    peak_risk: float
    avg_risk: float
    utilization: float
    horizon_exceeded: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{v:.4f}" if isinstance(v, float) else str(v))
        return out


@dataclass
class TrialResult:
    metrics: TrialMetrics
    cycle_times: dict[str, int]
    wall_ms: float
    log: list[str] = field(default_factory=list)
    audit: list[tuple[float, float]] = field(default_factory=list)
    product_order: list[str] = field(default_factory=list)  # arrival order


# -- world ------------------------------------------------------------------

PENDING, RUNNING, DONE = 0, 1, 2


class World:
    """Mutable simulation state; the plan is kept equal to what will happen."""

    def __init__(
        self,
        scenario: Scenario,
        mode: str = "distributed",
        risk_enabled: bool = False,
        seed: int = 0,
        schedule: ProductionSchedule | None = None,
        audit: bool = False,
    ):
        if mode not in ("distributed", "centralized"):
            raise ValueError(f"unknown mode {mode!r}")
        self.scenario = scenario
        self.mode = mode
        self.risk_enabled = risk_enabled
        self.seed = seed
        self.registry = scenario.directory()
        if schedule is None:
            schedule, util = generate_initial_schedule(scenario)
        else:
            util = utilization(schedule, [m.resource for m in self.registry.machines()])
        self.schedule = schedule
        self.initial_utilization = util
        self.machines = sorted(m.resource for m in self.registry.machines())
        st = scenario.stochastic
        streams = np.random.SeedSequence(seed).spawn(len(self.machines) + 1)
        self.runtime: dict[str, MachineRuntime] = {}
        for mid, ss in zip(self.machines, streams):
            rng = np.random.default_rng(ss)
            base = float(rng.uniform(*st.hazard))
            o_n = int(rng.integers(st.nominal_ops[0], st.nominal_ops[1] + 1))
            self.runtime[mid] = MachineRuntime(ResourceStatus(nominal_ops=o_n), base, rng, st.mttr)
        self.risk_rng = np.random.default_rng(streams[-1])
        self.objective = Objective(
            weights=RiskWeights(scenario.w1, scenario.w2, scenario.W),
            risk_enabled=risk_enabled,
            sigma_frac=st.sigma_frac,
            n_samples=scenario.n_samples,
        )
        self.bus = MessageBus()
        self.now = 0
        self.state: dict[ScheduledEvent, int] = {}
        self.heap: list[tuple[int, str, str, int, ScheduledEvent]] = []
        self.counter = 0
        self.arrival = {pid: t for pid, _, t in scenario.product_list()}
        self.due = {pid: t + scenario.due_offset for pid, t in self.arrival.items()}
        self.requirements = scenario.requirements()
        self.running: list[ScheduledEvent] = []
        self.exited: dict[str, int] = {}
        self.damaged: set[str] = set()
        self.broken = 0
        self.rescheduled = 0
        self.rescheduling_events = 0
        self.escalations = 0
        self.deferred = 0
        self.risks: list[float] = []
        self.wall_ms = 0.0
        self.log: list[str] = []
        self.audit = [] if audit else None
        self.total_processes = sum(1 for e in schedule.entries() if not e.event.is_transport)
        for pid in schedule.products:
            self._push_product(pid)

    # -- bookkeeping --------------------------------------------------------

    def _push(self, e: ScheduledEvent) -> None:
        if self.state.get(e, PENDING) == PENDING:
            self.counter += 1
            heapq.heappush(self.heap, (e.start, e.resource, e.product, self.counter, e))

    def _push_product(self, pid: str) -> None:
        for e in self.schedule.products[pid].entries:
            self._push(e)

    def _push_all(self) -> None:
        for pid in self.schedule.products:
            if pid not in self.damaged:
                self._push_product(pid)

    def _alive(self, e: ScheduledEvent) -> bool:
        ps = self.schedule.products.get(e.product)
        return ps is not None and any(x is e for x in ps.entries)

    def _peek_start(self) -> int | None:
        while self.heap:
            start, _, _, _, e = self.heap[0]
            if self.state.get(e, PENDING) == PENDING and e.start == start and self._alive(e):
                return start
            heapq.heappop(self.heap)
        return None

    def in_flight(self) -> int:
        return len(self.schedule.products) - len(self.exited) - len(self.damaged)

    def entered(self) -> int:
        return sum(1 for t in self.arrival.values() if t <= self.now)

    def finished(self) -> bool:
        return self.in_flight() == 0

    def next_tick(self) -> int | None:
        cands = [e.end for e in self.running]
        s = self._peek_start()
        if s is not None:
            cands.append(s)
        for rt in self.runtime.values():
            if rt.status.state == State.DOWN:
                cands.append(rt.status.down_until)
        if not cands:
            return None
        every = self.scenario.stochastic.idle_every
        return min(min(cands), (self.now // every + 1) * every)

    # -- event handlers -----------------------------------------------------

    def _complete(self, e: ScheduledEvent, fired: list) -> None:
        self.state[e] = DONE
        if e.resource in self.runtime:
            self.runtime[e.resource].status.op_count += 1
            if self.runtime[e.resource].status.state == State.UP:
                self.runtime[e.resource].status.state = State.IDLE
        ps = self.schedule.products[e.product]
        if ps.entries and ps.entries[-1] is e:
            self.exited[e.product] = self.now
            fired.append(("exit", e.product))
        fired.append(("finish", e))

    def _busy_machine(self, mid: str) -> bool:
        return any(e.resource == mid for e in self.running)

    def _damage(self, pid: str) -> None:
        self.damaged.add(pid)
        ps = self.schedule.products[pid]
        for e in list(ps.entries):
            if self.state.get(e, PENDING) != DONE:
                self.schedule.remove(e)
                self.state[e] = DONE
        self.running = [e for e in self.running if e.product != pid]

    def _context(self) -> RepairContext:
        return RepairContext(
            schedule=self.schedule,
            registry=self.registry,
            statuses={m: rt.status for m, rt in self.runtime.items()},
            now=self.now,
            horizon=self.scenario.horizon,
            delta=self.scenario.delta,
            transfer_points=self.scenario.transfer_points(),
            requirements=self.requirements,
            release=self.arrival,
            max_hops=self.scenario.max_hops,
            bus=self.bus,
            rng=self.risk_rng,
        )

    def _breakdown(self, mid: str, fired: list) -> None:
        self.broken += 1
        fired.append(("breakdown", mid))
        ctx = self._context()
        report = affected_events(
            self.schedule.resources[mid], self.now, (self.scenario.w_s, self.scenario.w_d), self.due
        )
        self.rescheduled += len(report.affected)
        self.rescheduling_events += 1
        if not report.affected:
            return
        t0 = time.perf_counter()
        outcomes = handle_disruption(ctx, report, self.objective, self.mode, audit=self.audit)
        self.wall_ms += (time.perf_counter() - t0) * 1000.0
        self._record(mid, report, outcomes)
        self._push_all()

    def _record(self, mid: str, report, outcomes: list[RepairOutcome]) -> None:
        for o in outcomes:
            if o.escalation is not None:
                self.escalations += 1
            if o.deferred:
                self.deferred += 1
            risk = o.decision.risk.unscaled if o.decision.risk is not None else float("nan")
            if o.decision.chosen is not None and o.decision.risk is not None:
                self.risks.append(o.decision.risk.unscaled)
            j = o.decision.j_value
            self.log.append(
                f"{self.now}\t{self.mode}\t{mid}\t{len(report.affected)}\t{o.entry.product}\t"
                f"{o.candidates}\t{o.messages}\t{j:.4f}\t{risk:.4f}\t"
                f"{'deferred' if o.deferred else (o.escalation.resolution if o.escalation else 'repaired')}"
            )

    def _start(self, e: ScheduledEvent, fired: list) -> None:
        mid = e.resource
        rt = self.runtime.get(mid)
        if rt is not None:
            st = self.scenario.stochastic
            if rt.status.state == State.DOWN:  # never planned, but stay safe
                raise RuntimeError(f"{e!r} scheduled on a machine that is down")
            if sample_breakdown(rt, "operation-start", now=self.now, idle_factor=st.idle_factor, max_p=st.max_p):
                fired.append(("damaged", e.product))
                self._damage(e.product)
                self._breakdown(mid, fired)
                return
            rt.status.state = State.UP
            d = sample_duration(e.duration, st.sigma_frac, rt.rng)
            e.end = e.start + d
        self.state[e] = RUNNING
        self.running.append(e)
        fired.append(("start", e))
        touched = self.schedule.propagate([e])
        for pid in touched:
            self._push_product(pid)

    def step(self) -> list:
        """Advance to the next tick where something happens and fire it."""
        fired: list = []
        t = self.next_tick()
        if t is None:
            return fired
        self.now = t
        self.bus.tick = t
        for e in sorted((e for e in self.running if e.end <= t), key=lambda e: (e.end, e.resource, e.product)):
            self.running.remove(e)
            self._complete(e, fired)
        for mid in self.machines:
            st = self.runtime[mid].status
            if st.state == State.DOWN and st.down_until <= t:
                st.repair()
                fired.append(("repair", mid))
        st = self.scenario.stochastic
        if t % st.idle_every == 0:
            for mid in self.machines:
                rt = self.runtime[mid]
                if rt.status.state == State.DOWN or self._busy_machine(mid):
                    continue
                if sample_breakdown(rt, "idle-checkpoint", now=t, idle_factor=st.idle_factor, max_p=st.max_p):
                    self._breakdown(mid, fired)
        while True:
            s = self._peek_start()
            if s is None or s > t:
                break
            _, _, _, _, e = heapq.heappop(self.heap)
            if s < t:
                raise RuntimeError(f"{e!r} missed its start at {s} (now {t})")
            self._start(e, fired)
        return fired

    def run(self) -> None:
        while not self.finished():
            t = self.next_tick()
            if t is None or t > self.scenario.horizon:
                break
            self.step()

    def metrics(self, trial: int = 0) -> TrialResult:
        cycles = {pid: t - self.arrival[pid] for pid, t in sorted(self.exited.items())}
        vals = list(cycles.values())
        m = TrialMetrics(
            trial=trial,
            seed=self.seed,
            mode=self.mode,
            risk="on" if self.risk_enabled else "off",
            products=len(self.schedule.products),
            exited=len(self.exited),
            damaged=len(self.damaged),
            broken=self.broken,
            rescheduled=self.rescheduled,
            total_processes=self.total_processes,
            communications=self.bus.count,
            rescheduling_events=self.rescheduling_events,
            escalations=self.escalations,
            deferred=self.deferred,
            mean_cycle=float(np.mean(vals)) if vals else 0.0,
            max_cycle=max(vals, default=0),
            makespan=max(self.exited.values(), default=0),
            peak_risk=max(self.risks, default=0.0),
            avg_risk=float(np.mean(self.risks)) if self.risks else 0.0,
            utilization=float(self.initial_utilization),
            horizon_exceeded=int(not self.finished()),
        )
        order = sorted(self.arrival, key=lambda p: (self.arrival[p], p))
        return TrialResult(m, cycles, self.wall_ms, list(self.log), list(self.audit or []), order)


def run_trial(
    scenario: Scenario,
    mode: str = "distributed",
    risk_enabled: bool = False,
    seed: int = 0,
    trial: int = 0,
    schedule: ProductionSchedule | None = None,
    audit: bool = False,
) -> TrialResult:
    world = World(scenario, mode, risk_enabled, seed, schedule.copy() if schedule else None, audit)
    world.run()
    return world.metrics(trial)
