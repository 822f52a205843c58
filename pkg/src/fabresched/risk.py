"""Schedule risk: delay risk of inserted events and breakdown risk of the
resources that perform them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .capability import InvalidNominalOps, ResourceStatus

INF = math.inf


@dataclass(frozen=True)
class RiskWeights:
    w1: float = 0.2
    w2: float = 0.8
    W: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.W < 0:
            raise ValueError("risk weights must be non-negative")
        if not math.isclose(self.w1 + self.w2, 1.0):
            raise ValueError("w1 + w2 must equal 1")


@dataclass(frozen=True)
class SlackTerm:
    """Timing of one inserted event relative to its latest feasible start.

    ``t_max = boundary - 2*delta - posterior_len - dur``; it is infinite when
    the event has no posterior event on its resource.
    """

    resource: str
    start: int
    t_max: float
    boundary: float = INF
    posterior_len: int = 0
    dur: int = 0
    delta: int = 0


@dataclass
class RiskReport:
    r1: float
    r2: float
    total: float
    per_resource_q: dict[str, float] = field(default_factory=dict)
    per_resource_p: dict[str, float] = field(default_factory=dict)
    unscaled: float = 0.0  # w1*R1 + w2*R2 before the W scale; what trial metrics report


def slack(start: int, t_max: float) -> float:
    return INF if t_max == INF else t_max - start


def _ratio(dt: float, t_max: float) -> float:
    if t_max == INF or dt == INF:
        return 1.0
    if t_max <= 0:
        return 0.0
    return min(1.0, max(0.0, dt / t_max))


def delay_risk_q(samples: Iterable[tuple[float, float]]) -> float:
    """1 - E[slack / t_max]; samples with infinite t_max count as ratio 1."""
    ratios = [_ratio(dt, tm) for dt, tm in samples]
    if not ratios:
        return 0.0
    return min(1.0, max(0.0, 1.0 - sum(ratios) / len(ratios)))


def breakdown_probability(status: ResourceStatus) -> float:
    if status.nominal_ops <= 0:
        raise InvalidNominalOps(f"nominal_ops must be positive, got {status.nominal_ops}")
    return min(1.0, status.op_count / status.nominal_ops)


def truncated_normal(rng: np.random.Generator, mean: float, sigma: float, size: int) -> np.ndarray:
    """Normal samples truncated to mean +/- 3 sigma, by rejection."""
    if sigma <= 0:
        return np.full(size, float(mean))
    out = rng.normal(mean, sigma, size)
    bad = np.abs(out - mean) > 3 * sigma
    while bad.any():
        out[bad] = rng.normal(mean, sigma, int(bad.sum()))
        bad = np.abs(out - mean) > 3 * sigma
    return out


def standard_draws(rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """A (2, n) block of standard normals truncated at +/- 3."""
    return truncated_normal(rng, 0.0, 1.0, 2 * n_samples).reshape(2, n_samples)


def term_q(term: SlackTerm, sigma_frac: float = 0.0, n_samples: int = 1000, rng=None, z=None) -> float:
    """Delay risk of one inserted event.

    With ``sigma_frac > 0`` the posterior length and the event duration are
    resampled; ``z`` supplies shared standard draws so several candidates
    can be compared on common random numbers.
    """
    if term.t_max == INF:
        return 0.0
    if sigma_frac <= 0 or (rng is None and z is None) or n_samples <= 0:
        return delay_risk_q([(slack(term.start, term.t_max), term.t_max)])
    if z is None:
        z = standard_draws(rng, n_samples)
    post = term.posterior_len * (1.0 + sigma_frac * z[0])
    dur = term.dur * (1.0 + sigma_frac * z[1])
    t_max = term.boundary - 2 * term.delta - np.rint(post) - np.rint(dur)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(t_max > 0, (t_max - term.start) / t_max, 0.0)
    return float(min(1.0, max(0.0, 1.0 - np.clip(ratio, 0.0, 1.0).mean())))


def assess(
    slack_terms: Iterable[SlackTerm],
    statuses: Mapping[str, ResourceStatus],
    weights: RiskWeights,
    sigma_frac: float = 0.0,
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
    resources: Iterable[str] | None = None,
    z: np.ndarray | None = None,
    cache: dict | None = None,
) -> RiskReport:
    """Risk of a candidate over the risk-bearing resources it uses.

    Only resources present in ``statuses`` are assessed (transport robots
    are kept out by the caller). Q per resource is the max over its
    inserted events; R1 and R2 are maxima over resources.
    """
    per_q: dict[str, float] = {}
    for term in slack_terms:
        if term.resource not in statuses:
            continue
        if cache is not None and term in cache:
            q = cache[term]
        else:
            q = term_q(term, sigma_frac, n_samples, rng, z)
            if cache is not None and z is not None:
                cache[term] = q  # only valid while the draws are shared
        per_q[term.resource] = max(per_q.get(term.resource, 0.0), q)
    used = set(per_q) if resources is None else {r for r in resources if r in statuses}
    used |= set(per_q)
    per_p = {r: breakdown_probability(statuses[r]) for r in sorted(used)}
    for r in used:
        per_q.setdefault(r, 0.0)
    r1 = max(per_q.values(), default=0.0)
    r2 = max(per_p.values(), default=0.0)
    unscaled = weights.w1 * r1 + weights.w2 * r2
    return RiskReport(r1, r2, weights.W * unscaled, per_q, per_p, unscaled)
