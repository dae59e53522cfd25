"""
Spectrum

Deterministic simulator for switching between consensus protocols at
runtime without stopping the replicated service.
"""

from spectrum.errors import (ConfigurationError, EraClosed, FaultScriptError, ProtocolError,
                             ScenarioError, SpectrumError, UsageError)
from spectrum.model import ALL_KEYS, Command, CommandKind, ProtocolKind, conflicts
from spectrum.plugin_api import Agreement, Execution, ProtocolRegistry
from spectrum.runner import RunResult, run_scenario
from spectrum.scenario import Scenario, load_scenario, parse_scenario
from spectrum.validator import validate_history

__all__ = [
    "ALL_KEYS", "Agreement", "Command", "CommandKind", "ConfigurationError", "EraClosed",
    "Execution", "FaultScriptError", "ProtocolError", "ProtocolKind", "ProtocolRegistry",
    "RunResult", "Scenario", "ScenarioError", "SpectrumError", "UsageError",
    "conflicts", "load_scenario", "parse_scenario", "run_scenario", "validate_history",
]
