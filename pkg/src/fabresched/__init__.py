"""Breakdown-driven schedule repair for multi-agent manufacturing cells."""

from .decide import Decision, Objective, centralized_reschedule, evaluate, select
from .protocol import affected_events, generate_candidate, replacement_span
from .risk import RiskWeights, assess
from .scenario import Scenario, build_minifab
from .schedule import (
    EventSpec,
    ProductionSchedule,
    ProductState,
    ScheduledEvent,
    apply_sequence,
    earliest_start,
    validate_production_schedule,
)
from .sim import generate_initial_schedule, run_trial

__all__ = [
    "Decision",
    "EventSpec",
    "Objective",
    "ProductState",
    "ProductionSchedule",
    "RiskWeights",
    "Scenario",
    "ScheduledEvent",
    "affected_events",
    "apply_sequence",
    "assess",
    "build_minifab",
    "centralized_reschedule",
    "earliest_start",
    "evaluate",
    "generate_candidate",
    "generate_initial_schedule",
    "replacement_span",
    "run_trial",
    "select",
    "validate_production_schedule",
]
