#!/usr/bin/env python3
"""
Scenario Files

Parser for the nginx-like scenario configuration:

    # comment
    nodes 5;
    phase 30s 10;
    switch 60s DEMOCRATIC;

One directive per line, terminated by a semicolon. Durations accept `ms`
and `s` suffixes; bare numbers are milliseconds.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from core.logger import get_logger
from spectrum.errors import ConfigurationError, FaultScriptError, ScenarioError
from spectrum.model import ProtocolKind
from spectrum.oracle import OraclePolicy
from spectrum.simnet import FaultScript, LatencyMatrix
from spectrum.workload import WorkloadSpec

DIRECTIVE_PATTERN = re.compile(r'^\s*([a-z_]+)\s*([^;]*?)\s*;\s*(?:#.*)?$')
DURATION_PATTERN = re.compile(r'^(\d+(?:\.\d+)?)(ms|s)?$')
MODES = ("spectrum", "stop_and_restart")
ORACLE_MODES = ("off", "static", "adaptive")
QUICK_CLIENTS_PER_NODE = 1


def parse_duration(text):
    """
    Returns:
        float: Virtual milliseconds

    Raises:
        ScenarioError: If text is not a number with an optional ms/s suffix
    """
    match = DURATION_PATTERN.match(text.strip())
    if not match:
        raise ScenarioError(f"Invalid duration '{text}'")
    value = float(match.group(1))
    return value * 1000.0 if match.group(2) == "s" else value


def parse_bool(text):
    value = text.strip().lower()
    if value in ("on", "yes", "true", "1"):
        return True
    if value in ("off", "no", "false", "0"):
        return False
    raise ScenarioError(f"Invalid switch value '{text}' (expected on/off)")


@dataclass
class Scenario:
    name: str = "scenario"
    nodes: int = 5
    seed: int = 0
    duration: float = 60_000.0
    grace: float = 10_000.0
    initial_protocol: ProtocolKind = ProtocolKind.MONARCHIC
    mode: str = "spectrum"
    latency: str = "wan"
    uniform_delay: float = 50.0
    latency_rows: dict = field(default_factory=dict)
    jitter: float = 0.1
    fifo: bool = False
    suspicion_timeout: float | None = None
    clients_per_node: int = 50
    retransmit_timeout: float | None = None
    hot_keys: int = 1
    phases: list = field(default_factory=list)
    switches: list = field(default_factory=list)
    faults: FaultScript = field(default_factory=FaultScript)
    crash_leader_before_decide: set = field(default_factory=set)
    crash_coordinator: float | None = None
    oracle: str = "off"
    oracle_policy: OraclePolicy = field(default_factory=OraclePolicy)
    safety_suite: bool = False

    def latency_matrix(self):
        """
        Raises:
            ConfigurationError: If explicit rows do not cover every node
        """
        if self.latency == "wan":
            return LatencyMatrix.wan(self.nodes, self.seed, self.jitter)
        if self.latency == "uniform":
            return LatencyMatrix.uniform(self.nodes, self.uniform_delay, self.seed, self.jitter)
        if sorted(self.latency_rows) != list(range(self.nodes)):
            raise ConfigurationError(f"latency_row needed for each of the {self.nodes} nodes")
        rows = [self.latency_rows[i] for i in range(self.nodes)]
        return LatencyMatrix(rows, self.seed, self.jitter)

    def workload_spec(self):
        return WorkloadSpec(self.clients_per_node, list(self.phases), self.hot_keys)

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed), faults=FaultScript(list(self.faults.entries)))

    def quick(self):
        """Same scenario at desk scale: at most QUICK_CLIENTS_PER_NODE clients per node."""
        return dataclasses.replace(self, clients_per_node=min(self.clients_per_node, QUICK_CLIENTS_PER_NODE),
                                   faults=FaultScript(list(self.faults.entries)))

    def validate(self):
        """
        Raises:
            ScenarioError: On inconsistent settings
            FaultScriptError: If faults break the crash budget
        """
        if self.nodes < 3:
            raise ScenarioError(f"At least 3 nodes required, got {self.nodes}")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        if self.mode == "stop_and_restart" and len(self.switches) != 1:
            raise ScenarioError("stop_and_restart scenarios need exactly one switch")
        self.faults.validate(self.nodes, self.safety_suite)
        self.workload_spec()
        return self


class ScenarioParser:
    """Line-oriented directive parser; errors name the file and line."""

    def __init__(self, source="<scenario>"):
        self.source = source
        self.logger = get_logger()

    def parse(self, text, name=None):
        scenario = Scenario(name=name or Path(self.source).stem)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            match = DIRECTIVE_PATTERN.match(line)
            if not match:
                raise ScenarioError(f"{self.source}:{lineno}: malformed directive '{line}'")
            directive, args = match.group(1), match.group(2).split()
            handler = getattr(self, f"_d_{directive}", None)
            if handler is None:
                raise ScenarioError(f"{self.source}:{lineno}: unknown directive '{directive}'")
            try:
                handler(scenario, args)
            except (ScenarioError, FaultScriptError, ConfigurationError) as e:
                raise ScenarioError(f"{self.source}:{lineno}: {e}") from e
            except (ValueError, IndexError) as e:
                raise ScenarioError(f"{self.source}:{lineno}: bad arguments for '{directive}'") from e
        self.logger.debug(f"Parsed scenario {scenario.name} from {self.source}")
        return scenario.validate()

    # -- directives --------------------------------------------------------

    def _d_nodes(self, s, args):
        s.nodes = int(args[0])

    def _d_seed(self, s, args):
        s.seed = int(args[0])

    def _d_duration(self, s, args):
        s.duration = parse_duration(args[0])

    def _d_grace(self, s, args):
        s.grace = parse_duration(args[0])

    def _d_initial_protocol(self, s, args):
        s.initial_protocol = ProtocolKind.parse(args[0])

    def _d_mode(self, s, args):
        if args[0] not in MODES:
            raise ScenarioError(f"mode must be one of {', '.join(MODES)}")
        s.mode = args[0]

    def _d_latency(self, s, args):
        if args[0] == "uniform":
            s.uniform_delay = parse_duration(args[1])
        elif args[0] not in ("wan", "matrix"):
            raise ScenarioError("latency must be wan, uniform <delay> or matrix")
        s.latency = args[0]

    def _d_latency_row(self, s, args):
        s.latency_rows[int(args[0])] = [parse_duration(a) for a in args[1:]]

    def _d_jitter(self, s, args):
        s.jitter = float(args[0])

    def _d_fifo(self, s, args):
        s.fifo = parse_bool(args[0])

    def _d_suspicion_timeout(self, s, args):
        s.suspicion_timeout = parse_duration(args[0])

    def _d_clients_per_node(self, s, args):
        s.clients_per_node = int(args[0])

    def _d_retransmit_timeout(self, s, args):
        s.retransmit_timeout = parse_duration(args[0])

    def _d_hot_keys(self, s, args):
        s.hot_keys = int(args[0])

    def _d_phase(self, s, args):
        s.phases.append((parse_duration(args[0]), float(args[1].rstrip("%"))))

    def _d_switch(self, s, args):
        s.switches.append((parse_duration(args[0]), ProtocolKind.parse(args[1])))

    def _d_crash(self, s, args):
        s.faults.add(parse_duration(args[1]), "crash", int(args[0]))

    def _d_suspect(self, s, args):
        s.faults.add(parse_duration(args[1]), "recover_fd_suspect", int(args[0]))

    def _d_crash_leader_before_decide(self, s, args):
        s.crash_leader_before_decide.add(int(args[0]))

    def _d_crash_coordinator(self, s, args):
        s.crash_coordinator = parse_duration(args[0])

    def _d_oracle(self, s, args):
        if args[0] not in ORACLE_MODES:
            raise ScenarioError(f"oracle must be one of {', '.join(ORACLE_MODES)}")
        s.oracle = args[0]

    def _d_oracle_window(self, s, args):
        s.oracle_policy = dataclasses.replace(s.oracle_policy, window=parse_duration(args[0]))

    def _d_oracle_period(self, s, args):
        s.oracle_policy = dataclasses.replace(s.oracle_policy, period=parse_duration(args[0]))

    def _d_oracle_cooldown(self, s, args):
        s.oracle_policy = dataclasses.replace(s.oracle_policy, cooldown=parse_duration(args[0]))

    def _d_oracle_delay(self, s, args):
        s.oracle_policy = dataclasses.replace(s.oracle_policy, delay=parse_duration(args[0]))

    def _d_oracle_latency(self, s, args):
        s.oracle_policy = dataclasses.replace(s.oracle_policy, use_latency=parse_bool(args[0]))

    def _d_oracle_thresholds(self, s, args):
        s.oracle_policy = dataclasses.replace(s.oracle_policy, low=float(args[0]), high=float(args[1]))

    def _d_safety_suite(self, s, args):
        s.safety_suite = parse_bool(args[0])


def parse_scenario(text, name="scenario"):
    return ScenarioParser(f"<{name}>").parse(text, name)


def load_scenario(path):
    """
    Raises:
        ScenarioError: If the file is missing or does not parse
    """
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"Scenario file not found: {path}")
    with open(path, "r") as f:
        return ScenarioParser(str(path)).parse(f.read(), path.stem)
