"""Scenario description, the builtin Mini-Fab layout and JSON persistence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .capability import (
    TRANSFORMATION,
    CapabilityModel,
    Directory,
    Requirements,
    workspace_requirements,
)

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


@dataclass
class MachineSpec:
    id: str
    cell: str
    times: dict[str, int]  # process -> nominal ticks
    workspace: str = "L"


@dataclass
class RobotSpec:
    id: str
    reach: list[str]  # cells and buffers
    move_time: int = 20


@dataclass
class ProductType:
    name: str
    route: list[str]
    size: str = "S"


@dataclass
class Arrivals:
    pattern: list[str]  # product types fed in turn
    count: int = 100
    spacing: int = 30
    start: int = 10


@dataclass
class Stochastic:
    hazard: tuple[float, float] = (0.033, 0.10)
    mttr: tuple[int, int] = (1000, 1500)
    sigma_frac: float = 0.05
    nominal_ops: tuple[int, int] = (20, 40)
    idle_every: int = 100
    idle_factor: float = 20.0
    max_p: float = 0.5


@dataclass
class Scenario:
    machines: list[MachineSpec]
    robots: list[RobotSpec]
    product_types: list[ProductType]
    arrivals: Arrivals
    buffers: list[str] = field(default_factory=lambda: ["Entry", "Exit"])
    stochastic: Stochastic = field(default_factory=Stochastic)
    delta: int = 10
    horizon: int = 40000
    seed: int = 0
    target_utilization: float = 0.5
    max_hops: int = 2
    n_samples: int = 1000
    w1: float = 0.2
    w2: float = 0.8
    W: float = 1000.0
    w_s: float = 1.0
    w_d: float = 1.0
    due_offset: int = 2000
    name: str = "custom"

    # -- derived views ----------------------------------------------------

    @property
    def entry(self) -> str:
        return self.buffers[0]

    @property
    def exit(self) -> str:
        return self.buffers[-1]

    def cells(self) -> list[str]:
        return sorted({m.cell for m in self.machines})

    def transfer_points(self) -> frozenset[str]:
        return frozenset(self.buffers) | frozenset(self.cells())

    def robot_locations(self, robot: RobotSpec) -> set[str]:
        locs = set()
        for area in robot.reach:
            locs.add(area)
            locs.update(m.id for m in self.machines if m.cell == area)
        return locs

    def directory(self) -> Directory:
        models = []
        for m in self.machines:
            attrs = {p: {"workspace": m.workspace} for p in m.times}
            models.append(CapabilityModel(m.id, TRANSFORMATION, frozenset([m.id]), frozenset(m.times), dict(m.times), attrs))
        for r in self.robots:
            models.append(CapabilityModel.robot(r.id, self.robot_locations(r), r.move_time))
        return Directory(models)

    def product_list(self) -> list[tuple[str, ProductType, int]]:
        """(product id, type, arrival tick) in arrival order."""
        types = {t.name: t for t in self.product_types}
        a = self.arrivals
        width = len(str(a.count))
        out = []
        for i in range(a.count):
            t = types[a.pattern[i % len(a.pattern)]]
            out.append((f"{t.name}{i + 1:0{width}d}", t, a.start + i * a.spacing))
        return out

    def requirements(self) -> dict[str, Requirements]:
        return {pid: workspace_requirements(t.size) for pid, t, _ in self.product_list()}

    def validate(self) -> None:
        ids = [m.id for m in self.machines] + [r.id for r in self.robots]
        if len(set(ids)) != len(ids):
            raise ScenarioError("resource ids must be unique")
        if self.delta < 0 or self.horizon <= 0:
            raise ScenarioError("delta must be >= 0 and horizon > 0")
        if not 0 < self.target_utilization <= 1:
            raise ScenarioError("target_utilization must be in (0, 1]")
        if self.max_hops < 1 or self.n_samples < 0:
            raise ScenarioError("max_hops must be >= 1 and n_samples >= 0")
        for m in self.machines:
            if any(v <= 0 for v in m.times.values()):
                raise ScenarioError(f"{m.id}: process times must be positive")
            if not any(m.cell in r.reach for r in self.robots):
                raise ScenarioError(f"{m.id} is not reachable by any robot")
        known = {t.name for t in self.product_types}
        if not self.arrivals.pattern or set(self.arrivals.pattern) - known:
            raise ScenarioError("arrival pattern must name known product types")
        lo, hi = self.stochastic.hazard
        if not 0 <= lo <= hi <= 1:
            raise ScenarioError("hazard range must lie in [0, 1]")
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ScenarioError("w1 + w2 must equal 1")

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        d = dict(d)
        version = d.pop("schema", None)
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported scenario schema {version!r}")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys {sorted(extra)}")
        try:
            d["machines"] = [MachineSpec(**m) for m in d["machines"]]
            d["robots"] = [RobotSpec(**r) for r in d["robots"]]
            d["product_types"] = [ProductType(**p) for p in d["product_types"]]
            d["arrivals"] = Arrivals(**d["arrivals"])
            if "stochastic" in d:
                st = dict(d["stochastic"])
                for k in ("hazard", "mttr", "nominal_ops"):
                    if k in st:
                        st[k] = tuple(st[k])
                d["stochastic"] = Stochastic(**st)
            sc = cls(**d)
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from None
        sc.validate()
        return sc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        return cls.from_dict(data)


# Mini-Fab: 4 cells of 5 machines, docks named after the cells.
_MINIFAB = [
    ("M01", "A", ["P1"], "L"),
    ("M02", "A", ["P1"], "L"),
    ("M03", "A", ["P1"], "S"),
    ("M04", "A", ["P1"], "L"),
    ("M05", "A", ["P1", "P2"], "S"),
    ("M06", "B", ["P2"], "S"),
    ("M07", "B", ["P2", "P3"], "L"),
    ("M08", "B", ["P3"], "L"),
    ("M09", "B", ["P3"], "S"),
    ("M10", "B", ["P3"], "L"),
    ("M11", "C", ["P4"], "L"),
    ("M12", "C", ["P4"], "L"),
    ("M13", "C", ["P4", "P5"], "L"),
    ("M14", "C", ["P5"], "L"),
    ("M15", "C", ["P5"], "L"),
    ("M16", "D", ["P6"], "S"),
    ("M17", "D", ["P6"], "L"),
    ("M18", "D", ["P3", "P6"], "L"),
    ("M19", "D", ["P2", "P6"], "S"),
    ("M20", "D", ["P1", "P5"], "L"),
]

_ROBOTS = [
    ("R1", ["Entry", "A", "B"]),
    ("R2", ["A", "B", "D"]),
    ("R3", ["B", "C", "D"]),
    ("R4", ["C", "D", "Exit"]),
    ("R5", ["Entry", "A", "D"]),
    ("R6", ["B", "C", "Exit"]),
]


def build_minifab(seed: int = 0) -> Scenario:
    """The builtin 20-machine, 6-robot layout; ``seed`` draws process times."""
    rng = np.random.default_rng(seed)
    machines = []
    for mid, cell, procs, ws in _MINIFAB:
        times = {p: int(rng.integers(110, 201)) for p in procs}
        machines.append(MachineSpec(mid, cell, times, ws))
    robots = [RobotSpec(rid, reach, 20) for rid, reach in _ROBOTS]
    types = [
        ProductType("S", ["P1", "P2", "P3", "P6"], "S"),
        ProductType("L", ["P1", "P3", "P4", "P5"], "L"),
    ]
    sc = Scenario(
        machines=machines,
        robots=robots,
        product_types=types,
        arrivals=Arrivals(["S", "L"], count=100, spacing=30, start=10),
        seed=seed,
        name="minifab",
    )
    sc.validate()
    return sc
