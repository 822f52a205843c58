"""Command line entry point: ``run`` trials and ``compare`` two result sets."""

from __future__ import annotations

import argparse
import csv
import math
import os
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .scenario import Scenario, ScenarioError, build_minifab
from .sim import InfeasibleScenario, TrialMetrics, TrialResult, generate_initial_schedule, run_trial

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

# override key -> (type, lower, upper)
OVERRIDES = {
    "delta": (int, 0, 1000),
    "w1": (float, 0.0, 1.0),
    "w2": (float, 0.0, 1.0),
    "W": (float, 0.0, 1e6),
    "sigma_frac": (float, 0.0, 0.33),
    "max_hops": (int, 1, 4),
    "n_samples": (int, 0, 100000),
    "horizon": (int, 1, 10**7),
    "target_utilization": (float, 0.05, 1.0),
    "w_s": (float, 0.0, 1e6),
    "w_d": (float, 0.0, 1e6),
    "due_offset": (int, 0, 10**7),
}

LOG_HEADER = "trial\ttick\tmode\tresource\taffected\tproduct\tcandidates\tmessages\tchosen_j\tchosen_risk\toutcome\n"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "minifab"
    mode: str = "distributed"
    risk_enabled: bool = False
    trials: int = 5
    seed: int = 0
    out: str = "."
    overrides: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.mode not in ("distributed", "centralized"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def seeds(self) -> list[int]:
        return list(range(self.seed, self.seed + self.trials))


def parse_override(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    if key not in OVERRIDES:
        raise ConfigError(f"unknown override {key!r}; known: {', '.join(sorted(OVERRIDES))}")
    typ, lo, hi = OVERRIDES[key]
    try:
        val = typ(raw)
    except ValueError:
        raise ConfigError(f"override {key} expects {typ.__name__}, got {raw!r}") from None
    if not lo <= val <= hi:
        raise ConfigError(f"override {key}={val} outside [{lo}, {hi}]")
    return key, val


def load_scenario(cfg: RunConfig) -> Scenario:
    sc = build_minifab() if cfg.scenario == "minifab" else Scenario.load(cfg.scenario)
    for key, val in cfg.overrides.items():
        if key == "sigma_frac":
            sc.stochastic.sigma_frac = val
        else:
            setattr(sc, key, val)
    if "w1" in cfg.overrides and "w2" not in cfg.overrides:
        sc.w2 = 1.0 - sc.w1
    elif "w2" in cfg.overrides and "w1" not in cfg.overrides:
        sc.w1 = 1.0 - sc.w2
    sc.validate()
    return sc


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_outputs(out: Path, cfg: RunConfig, results: list[TrialResult]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cols = TrialMetrics.columns()
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in results:
            w.writerow(r.metrics.row())
    with open(out / "events.log", "w") as fh:
        fh.write(LOG_HEADER)
        for r in results:
            for line in r.log:
                fh.write(f"{r.metrics.trial}\t{line}\n")
    cohorts = cohort_table(results)
    with open(out / "cohorts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cohort", "mean_cycle", "std_cycle", "trials"])
        for row in cohorts:
            w.writerow([row[0], f"{row[1]:.4f}", f"{row[2]:.4f}", row[3]])
    (out / "summary.txt").write_text(summary_text(cfg, results, cohorts))


def numeric_columns() -> list[str]:
    return [c for c in TrialMetrics.columns() if c not in ("trial", "seed", "mode", "risk")]


def mean_std(vals: list[float]) -> tuple[float, float]:
    m = statistics.fmean(vals)
    s = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return m, s


def cohort_table(results: list[TrialResult], size: int = 10) -> list[tuple[str, float, float, int]]:
    """Mean and spread over trials of each trial's mean cycle time per cohort
    of ``size`` products in arrival order."""
    if not results:
        return []
    order = results[0].product_order or sorted({pid for r in results for pid in r.cycle_times})
    rows = []
    for i in range(0, len(order), size):
        ids = order[i : i + size]
        per_trial = []
        for r in results:
            vals = [r.cycle_times[p] for p in ids if p in r.cycle_times]
            if vals:
                per_trial.append(statistics.fmean(vals))
        if per_trial:
            m, s = mean_std(per_trial)
        else:
            m, s = math.nan, math.nan
        rows.append((f"{i + 1}-{i + len(ids)}", m, s, len(per_trial)))
    return rows


def summary_text(cfg: RunConfig, results: list[TrialResult], cohorts) -> str:
    lines = [
        f"scenario: {cfg.scenario}",
        f"mode: {cfg.mode}",
        f"risk: {'on' if cfg.risk_enabled else 'off'}",
        f"trials: {cfg.trials} (seeds {cfg.seed}..{cfg.seed + cfg.trials - 1})",
        "",
        f"{'metric':<22}{'mean':>16}{'std':>16}",
    ]
    # statistics come from the written row values so the summary agrees with metrics.csv
    cols = TrialMetrics.columns()
    for col in numeric_columns():
        i = cols.index(col)
        vals = [float(r.metrics.row()[i]) for r in results]
        m, s = mean_std(vals)
        lines.append(f"{col:<22}{_fmt(m):>16}{_fmt(s):>16}")
    lines += ["", "cycle time per 10-product cohort (arrival order)", f"{'cohort':<10}{'mean':>14}{'std':>14}"]
    for name, m, s, _ in cohorts:
        lines.append(f"{name:<10}{m:>14.2f}{s:>14.2f}")
    walls = [r.wall_ms for r in results]
    lines += ["", "rescheduling wall time per trial (ms, platform dependent)"]
    lines += [f"  trial {r.metrics.trial}: {r.wall_ms:.1f}" for r in results]
    m, s = mean_std(walls)
    lines.append(f"  mean {m:.1f}  std {s:.1f}")
    return "\n".join(lines) + "\n"


def run(cfg: RunConfig) -> list[TrialResult]:
    sc = load_scenario(cfg)
    schedule, _ = generate_initial_schedule(sc)
    results = []
    for i, seed in enumerate(cfg.seeds()):
        results.append(run_trial(sc, cfg.mode, cfg.risk_enabled, seed, trial=i, schedule=schedule))
    write_outputs(Path(cfg.out), cfg, results)
    return results


# -- compare ----------------------------------------------------------------


def read_metrics(path: Path) -> list[dict[str, str]]:
    with open(path / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


PERCENT_OF = {"rescheduled": "total_processes", "damaged": "products", "exited": "products"}


def compare_text(a: list[dict], b: list[dict], name_a: str, name_b: str) -> str:
    seeds_a = [r["seed"] for r in a]
    seeds_b = [r["seed"] for r in b]
    if seeds_a != seeds_b:
        raise ConfigError(f"seed lists differ: {seeds_a} vs {seeds_b}")
    label_a = f"A ({a[0]['mode']}, risk {a[0]['risk']})" if a else "A"
    label_b = f"B ({b[0]['mode']}, risk {b[0]['risk']})" if b else "B"
    head = "".join(f"{'seed ' + s:>12}" for s in seeds_a)
    lines = [f"A: {name_a}", f"B: {name_b}", "", f"{'metric':<22}{'':<28}{head}{'average':>12}{'percent':>10}{'delta B-A':>12}"]
    for col in numeric_columns():
        va = [float(r[col]) for r in a]
        vb = [float(r[col]) for r in b]
        ma, mb = statistics.fmean(va), statistics.fmean(vb)
        for label, vals, mean in ((label_a, va, ma), (label_b, vb, mb)):
            cells = "".join(f"{v:>12.4g}" for v in vals)
            pct = ""
            if col in PERCENT_OF:
                rows = a if vals is va else b
                denom = statistics.fmean(float(r[PERCENT_OF[col]]) for r in rows)
                pct = f"{100.0 * mean / denom:.2f}%" if denom else ""
            delta = f"{mb - ma:>12.4f}" if vals is vb else ""
            lines.append(f"{col if vals is va else '':<22}{label:<28}{cells}{mean:>12.4f}{pct:>10}{delta}")
    return "\n".join(lines) + "\n"


def compare(dir_a: str, dir_b: str, out: str) -> Path:
    text = compare_text(read_metrics(Path(dir_a)), read_metrics(Path(dir_b)), dir_a, dir_b)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / "comparison.txt").write_text(text)
    return path / "comparison.txt"


# -- argument handling --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fabresched", description="Breakdown rescheduling experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run seeded trials and write metrics")
    r.add_argument("--scenario", default="minifab", help="scenario JSON path or 'minifab'")
    r.add_argument("--mode", choices=["distributed", "centralized"], default="distributed")
    r.add_argument("--risk", choices=["on", "off"], default="off")
    r.add_argument("--trials", type=int, default=5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None, help="output directory (default: $RESCHED_OUT)")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="parameter override")
    c = sub.add_parser("compare", help="paired comparison of two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", default=None, help="where comparison.txt goes (default: $RESCHED_OUT or dir_b)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        if args.command == "compare":
            out = args.out or os.environ.get("RESCHED_OUT") or args.dir_b
            path = compare(args.dir_a, args.dir_b, out)
            print(f"wrote {path}")
            return 0
        out = args.out or os.environ.get("RESCHED_OUT")
        if not out:
            raise ConfigError("no output directory: pass --out or set RESCHED_OUT")
        overrides = dict(parse_override(s) for s in args.set)
        cfg = RunConfig(args.scenario, args.mode, args.risk == "on", args.trials, args.seed, out, overrides)
        results = run(cfg)
    except (ConfigError, ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleScenario as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"wrote {len(results)} trials to {cfg.out}")
    return 0
