"""Online detection of causally-precedes (CP) races in lock/access traces."""

from .engine import AnalysisState, EngineOptions, finalize, init_state, process_event, run_engine
from .invariants import check_invariants, check_trace_invariants
from .lifecycle import RaceReport, RunReport
from .oracle import analyze_relations, cp_distance, enumerate_races_adjacent_forcing, enumerate_races_all_pairs, run_oracle
from .trace import Event, Trace, TraceError, load_trace, serialize_trace, validate_well_formed

__all__ = [
    "AnalysisState",
    "EngineOptions",
    "Event",
    "RaceReport",
    "RunReport",
    "Trace",
    "TraceError",
    "analyze_relations",
    "check_invariants",
    "check_trace_invariants",
    "cp_distance",
    "enumerate_races_adjacent_forcing",
    "enumerate_races_all_pairs",
    "finalize",
    "init_state",
    "load_trace",
    "process_event",
    "run_engine",
    "run_oracle",
    "serialize_trace",
    "validate_well_formed",
]
