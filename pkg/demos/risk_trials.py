"""A few paired Mini-Fab trials with the risk term off and on."""

from __future__ import annotations

import statistics
import sys

from fabresched.scenario import build_minifab
from fabresched.sim import generate_initial_schedule, run_trial

COLS = ("damaged", "broken", "rescheduled", "communications", "mean_cycle", "avg_risk")


def main(n: int = 5):
    sc = build_minifab()
    sched, _ = generate_initial_schedule(sc)
    print(f"{'':8}" + "".join(f"{c:>16}" for c in COLS))
    for risk in (False, True):
        rows = [run_trial(sc, "distributed", risk, seed, schedule=sched).metrics for seed in range(n)]
        means = [statistics.fmean(getattr(m, c) for m in rows) for c in COLS]
        print(f"{'risk ' + ('on' if risk else 'off'):8}" + "".join(f"{v:>16.3f}" for v in means))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
