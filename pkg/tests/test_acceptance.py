"""End-to-end acceptance checks. Each prints one PASS/FAIL line."""

from __future__ import annotations

import math
import random
import statistics
import time

import numpy as np
import pytest

from fabresched.capability import ResourceStatus
from fabresched.cli import main
from fabresched.decide import Objective, distributed_decision, repair_event
from fabresched.protocol import affected_events, check_candidate, make_request
from fabresched.risk import INF, RiskWeights, SlackTerm, assess, breakdown_probability, term_q
from fabresched.scenario import build_minifab
from fabresched.schedule import earliest_start, validate_production_schedule
from fabresched.sim import World, generate_initial_schedule, run_trial
from oracles import context_for, oracle_repair, random_instance, scan_start, signature


def verdict(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {title} [{detail}]")
    assert ok, detail


@pytest.fixture(scope="module")
def minifab():
    sc = build_minifab()
    sched, _ = generate_initial_schedule(sc)
    return sc, sched


def _live(ctx, entry, rid):
    return any(e is entry for e in ctx.schedule.resources[rid].entries)


# -- 1 ----------------------------------------------------------------------


def test_1_oracle_equivalence(capsys):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    instances = decisions = bad = 0
    problems = []
    while instances < 500:
        inst = random_instance(rng)
        ctx = context_for(inst)
        rep = affected_events(ctx.schedule.resources[inst.disrupted], ctx.now)
        ctx.unavailable.add(inst.disrupted)
        instances += 1
        for e in rep.affected:
            if not _live(ctx, e, inst.disrupted):
                continue
            best, feasible = oracle_repair(ctx, e, inst.disrupted)
            allowed = set(feasible)
            req = make_request(ctx, e, inst.disrupted)
            dist, _, _ = distributed_decision(ctx, req, Objective())
            stray = [signature(c) for c, _ in dist.all_evaluated if signature(c) not in allowed]
            out = repair_event(ctx, e, inst.disrupted, Objective(), "centralized")
            got = signature(out.decision.chosen) if out.decision.chosen else None
            want = best[1] if best else None
            decisions += 1
            if stray or got != want:
                bad += 1
                problems.append((instances, got, want, stray[:1]))
    secs = time.perf_counter() - t0
    ok = bad == 0 and secs < 60
    verdict(capsys, 1, "oracle equivalence", ok, f"{instances} instances, {decisions} decisions, {bad} mismatches, {secs:.1f}s {problems[:2]}")


# -- 2 ----------------------------------------------------------------------


def test_2_feasibility_invariants(capsys):
    rng = random.Random(77)
    scenarios = committed = 0
    failures = []
    for mode in ("distributed", "centralized"):
        for _ in range(1000):
            inst = random_instance(rng)
            ctx = context_for(inst)
            rep = affected_events(ctx.schedule.resources[inst.disrupted], ctx.now)
            ctx.unavailable.add(inst.disrupted)
            scenarios += 1
            for e in rep.affected:
                if not _live(ctx, e, inst.disrupted):
                    continue
                req = make_request(ctx, e, inst.disrupted)
                out = repair_event(ctx, e, inst.disrupted, Objective(), mode)
                if out.decision.chosen is None:
                    continue
                committed += 1
                c = out.decision.chosen
                if not check_candidate(req, c) or c.events[0].start < ctx.now:
                    failures.append((mode, scenarios, "transition/precedence"))
            ctx.unavailable.discard(inst.disrupted)
            v = validate_production_schedule(ctx.schedule, ctx.registry.sites())
            if v:
                failures.append((mode, scenarios, v[0]))
    ok = not failures and scenarios >= 2000
    verdict(capsys, 2, "feasibility invariants", ok, f"{scenarios} scenarios, {committed} committed repairs, {len(failures)} failures {failures[:2]}")


# -- 3 ----------------------------------------------------------------------


def _random_lane(rng):
    delta = rng.choice([0, 1, 10])
    horizon = rng.randint(20, 200)
    spans, t = [], rng.randint(0, 20)
    for _ in range(rng.randint(0, 6)):
        d = rng.randint(1, 20)
        if t + d > horizon:
            break
        spans.append((t, t + d))
        t += d + delta + rng.randint(0, 15)
    pinned = frozenset(i for i in range(len(spans)) if rng.random() < 0.2)
    return spans, delta, horizon, pinned


def test_3_earliest_start_vs_scan(capsys):
    rng = random.Random(5)
    cases = mismatches = shifted = 0
    for _ in range(5000):
        spans, delta, horizon, pinned = _random_lane(rng)
        t = rng.randint(0, horizon)
        dur = rng.randint(1, 30)
        start_from = rng.randint(0, 20)
        want = scan_start(spans, t, delta, dur, horizon, start_from, pinned)
        try:
            got = earliest_start(spans, t, delta, dur, horizon, start_from, pinned)
            got = (got.start, got.shift[0] if got.shift else None)
        except ValueError:
            got = None
        cases += 1
        if got is not None and got[1] is not None:
            shifted += 1
        if got != want:
            mismatches += 1
    verdict(capsys, 3, "earliest_start equals tick scan", mismatches == 0, f"{cases} cases, {shifted} with one shift, {mismatches} mismatches")


# -- 4 ----------------------------------------------------------------------


def test_4_centralized_not_worse(capsys, minifab):
    sc, sched = minifab
    pairs = []
    for seed in range(3):
        pairs += run_trial(sc, "distributed", False, seed, schedule=sched, audit=True).audit
    both = [(c, d) for c, d in pairs if math.isfinite(c) and math.isfinite(d)]
    worse = [(c, d) for c, d in both if c > d + 1e-9]
    ok = bool(both) and not worse
    verdict(capsys, 4, "centralized J <= distributed J", ok, f"{len(pairs)} events, {len(both)} with both, {len(worse)} violations")


# -- 5 and 8 share the 5-trial runs -------------------------------------------


@pytest.fixture(scope="module")
def five_trials(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    out = {}
    for mode in ("distributed", "centralized"):
        t0 = time.perf_counter()
        code = main(["run", "--mode", mode, "--trials", "5", "--seed", "0", "--out", str(root / mode)])
        out[mode] = (code, time.perf_counter() - t0, root / mode)
    return out


class Recorder(World):
    def _record(self, mid, report, outcomes):
        self.outcomes = getattr(self, "outcomes", []) + list(outcomes)
        super()._record(mid, report, outcomes)


def _column(path, col):
    import csv

    with open(path / "metrics.csv") as fh:
        return [float(r[col]) for r in csv.DictReader(fh)]


def test_5_communications(capsys, minifab, five_trials):
    sc, sched = minifab
    w = Recorder(sc, "centralized", False, 0, sched.copy())
    w.run()
    r = len(w.registry)
    outs = getattr(w, "outcomes", [])
    off = [o for o in outs if o.messages != r * o.span_len]
    dist = _column(five_trials["distributed"][2], "communications")
    cent = _column(five_trials["centralized"][2], "communications")
    ratio = statistics.fmean(dist) / statistics.fmean(cent)
    ok = bool(outs) and not off and ratio <= 0.9 and all(d < c for d, c in zip(dist, cent))
    verdict(
        capsys, 5, "communication counts", ok,
        f"{len(outs)} centralized events, {len(off)} off formula, mean {statistics.fmean(dist):.0f} vs {statistics.fmean(cent):.0f}, ratio {ratio:.3f}",
    )


# -- 6 ----------------------------------------------------------------------


def test_6_risk_benefit(capsys, minifab):
    sc, sched = minifab
    cols = ("damaged", "broken", "rescheduled", "avg_risk")
    runs = {}
    for risk in (False, True):
        ms = [run_trial(sc, "distributed", risk, seed, schedule=sched).metrics for seed in range(20)]
        runs[risk] = {c: statistics.fmean(getattr(m, c) for m in ms) for c in cols}
    lower = {c: runs[True][c] < runs[False][c] for c in cols}
    detail = ", ".join(f"{c} {runs[True][c]:.3f} vs {runs[False][c]:.3f}" for c in cols)
    verdict(capsys, 6, "risk-on lowers damage, breakdowns, reschedules, risk", all(lower.values()), f"20 paired seeds: {detail}")


# -- 7 ----------------------------------------------------------------------


def test_7_risk_bounds(capsys):
    rng = np.random.default_rng(0)
    out_of_range = 0
    for _ in range(2000):
        terms = []
        for m in ("M1", "M2"):
            s = int(rng.integers(0, 200))
            dur, d, post = int(rng.integers(1, 40)), int(rng.integers(0, 10)), int(rng.integers(1, 40))
            tmax = s + int(rng.integers(0, 60))
            terms.append(SlackTerm(m, s, tmax, tmax + 2 * d + post + dur, post, dur, d))
        sts = {m: ResourceStatus(op_count=int(rng.integers(0, 50)), nominal_ops=int(rng.integers(1, 40))) for m in ("M1", "M2")}
        rep = assess(terms, sts, RiskWeights(), 0.05, 50, rng)
        out_of_range += not (0 <= rep.r1 <= 1 and 0 <= rep.r2 <= 1)
    no_post = assess([SlackTerm("M1", 3, INF)], {"M1": ResourceStatus(nominal_ops=10)}, RiskWeights()).r1
    fresh = breakdown_probability(ResourceStatus(op_count=0, nominal_ops=30))
    term = SlackTerm("M1", 1, 13, boundary=30, posterior_len=10, dur=5, delta=1)
    spread = abs(term_q(term, 0.05, 10_000, np.random.default_rng(1)) - term_q(term, 0.05, 10_000, np.random.default_rng(2)))
    ok = out_of_range == 0 and no_post == 0 and fresh == 0 and spread < 0.02
    verdict(capsys, 7, "risk bounds and degenerate cases", ok, f"{out_of_range} out of range, Q={no_post}, P(0)={fresh}, MC spread {spread:.4f}")


# -- 8 ----------------------------------------------------------------------


def test_8_determinism_and_runtime(capsys, tmp_path, five_trials):
    code = main(["run", "--mode", "distributed", "--trials", "5", "--seed", "0", "--out", str(tmp_path)])
    first = five_trials["distributed"][2] / "metrics.csv"
    same = code == 0 and (tmp_path / "metrics.csv").read_bytes() == first.read_bytes()
    times = {m: t for m, (c, t, _) in five_trials.items()}
    codes_ok = all(c == 0 for c, _, _ in five_trials.values())
    ok = same and codes_ok and all(t < 60 for t in times.values())
    detail = ", ".join(f"{m} {t:.1f}s" for m, t in times.items())
    verdict(capsys, 8, "determinism and runtime", ok, f"byte-identical {same}, {detail}")
