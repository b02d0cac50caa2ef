"""Discrete-event simulator of NTP broadcast mode and the KoD-based sync-prevention attack."""

from .scenario import Outcome, ScenarioError, Verdict, execute, load_scenario, parse_scenario, run_scenario
from .report import emit_report

__version__ = "0.1.0"

__all__ = ["Outcome", "ScenarioError", "Verdict", "emit_report", "execute", "load_scenario",
           "parse_scenario", "run_scenario"]
