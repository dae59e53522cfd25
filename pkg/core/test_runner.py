#!/usr/bin/env python3
"""
Simulation Runner

Handed to every test suite. Builds small clusters and scenarios, runs them
in virtual time and checks the resulting traces.
"""

import dataclasses

from core.logger import get_logger
from core.path_utils import scenario_path
from spectrum.model import Command, ProtocolKind
from spectrum.node import Replica
from spectrum.plugin_api import ProtocolRegistry
from spectrum.runner import run_scenario
from spectrum.scenario import load_scenario, parse_scenario
from spectrum.simnet import LatencyMatrix, Simulation
from spectrum.validator import validate_history


class SimulationRunner:
    """Entry point for tests into the simulator."""

    def __init__(self, results, seed=0, quick=False):
        """
        Args:
            results (TestResults): Results collector
            seed (int): Base seed for every scenario the tests build
            quick (bool): Shorten long scenarios where a test allows it
        """
        self.results = results
        self.seed = seed
        self.quick = quick
        self.logger = get_logger()

    # -- scenarios -------------------------------------------------------------

    def scenario(self, text, name="inline", **overrides):
        """Parse an inline scenario; the runner seed applies unless overridden."""
        scenario = parse_scenario(text, name)
        overrides.setdefault("seed", self.seed)
        return dataclasses.replace(scenario, **overrides)

    def bundled(self, name, **overrides):
        """Load data/scenarios/<name>.conf."""
        scenario = load_scenario(scenario_path(name))
        return dataclasses.replace(scenario, **overrides) if overrides else scenario

    def run(self, scenario, trace_messages=False):
        self.logger.debug(f"Running scenario {scenario.name} with seed {scenario.seed}")
        return run_scenario(scenario, trace_messages=trace_messages)

    def validate(self, result):
        return validate_history(result.trace, result.history)

    # -- hand-built clusters ---------------------------------------------------------

    def cluster(self, n=5, kind=ProtocolKind.MONARCHIC, delay_ms=None, jitter=0.0, wan=False,
                latency=None, settle_ms=2_000.0, **sim_kwargs):
        """
        Build n replicas, bootstrap era 1 running `kind` and let it settle.
        `latency` is an explicit one-way delay matrix and overrides the others.

        Returns:
            tuple: (Simulation, list of Replica)
        """
        if latency is not None:
            latency = LatencyMatrix(latency, self.seed, jitter)
        elif wan:
            latency = LatencyMatrix.wan(n, self.seed, jitter)
        else:
            latency = LatencyMatrix.uniform(n, delay_ms or 10.0, self.seed, jitter)
        sim = Simulation(latency, **sim_kwargs)
        registry = ProtocolRegistry.default()
        replicas = [Replica(i, sim, registry, self.seed) for i in range(n)]
        replicas[0].request_switch(kind)
        sim.run(until=settle_ms)
        return sim, replicas

    def submit(self, sim, replica, client_id, seq, keys, at=None):
        """Submit one client command at `replica`, now or at virtual time `at`."""
        cmd = Command.client(client_id, seq, keys, b"x")
        if at is None:
            replica.submit(cmd)
        else:
            sim.schedule(at, replica.submit, cmd, label="submit")
        return cmd

    def run_for(self, sim, ms):
        return sim.run(until=sim.now + ms)

    @staticmethod
    def decided_labels(replica):
        return [cmd.label for _, cmd in replica.meta.delivered]
