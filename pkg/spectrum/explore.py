#!/usr/bin/env python3
"""
Schedule Explorer

Exhaustive check of the era switch on a tiny cluster: from a fixed
starting state, branch over which in-flight message is delivered next and
over crashing the switch proposer, up to a depth bound. Every branch is
then run to quiescence in default order and checked for agreement on the
era's Switch command and for completion of the switch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from core.logger import get_logger
from spectrum.model import ProtocolKind
from spectrum.node import Replica
from spectrum.plugin_api import ProtocolRegistry
from spectrum.simnet import LatencyMatrix, Simulation

SETTLE_MS = 3_000.0


@dataclass
class ExplorationResult:
    explored: int = 0
    violations: list = field(default_factory=list)
    incomplete: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations and not self.incomplete


class SwitchWorld:
    """A small cluster that has installed era 1 and has a switch in flight."""

    def __init__(self, n=3, delay_ms=10.0, initial=ProtocolKind.MONARCHIC, target=ProtocolKind.DEMOCRATIC):
        latency = LatencyMatrix.uniform(n, delay_ms, jitter_fraction=0.0)
        self.sim = Simulation(latency)
        registry = ProtocolRegistry.default()
        self.replicas = [Replica(i, self.sim, registry) for i in range(n)]
        self.proposer = 0
        self.era = 2
        self.replicas[0].request_switch(initial)
        self.sim.run(until=self.sim.now + SETTLE_MS / 4)
        self.replicas[self.proposer].request_switch(target)
        self.crashes = 0

    def decided(self, node):
        return self.replicas[node].meta.decided.get(self.era)

    def someone_accepted(self):
        for replica in self.replicas:
            if replica.meta.decided.get(self.era) is not None:
                return True
            if not replica.crashed and replica.meta.vdec.get(self.era) is not None:
                return True
        return False


def _verdict(world, path, result):
    world.sim.run(until=world.sim.now + SETTLE_MS)
    decided = {r.node_id: world.decided(r.node_id) for r in world.replicas
               if world.decided(r.node_id) is not None}
    labels = {cmd.label for cmd in decided.values()}
    if len(labels) > 1:
        result.violations.append((path, {n: c.label for n, c in decided.items()}))
        return
    correct = world.sim.correct_nodes()
    if world.someone_accepted() and any(world.decided(n) is None for n in correct):
        result.incomplete.append((path, sorted(decided)))


def explore_switch(depth=6, width=3, max_crashes=1, n=3, limit=None):
    """
    Depth-first enumeration of delivery orders and proposer crashes.

    Args:
        depth (int): Branching steps before running to quiescence
        width (int): Earliest in-flight messages considered at each step
        max_crashes (int): Proposer crashes allowed per branch
        n (int): Cluster size
        limit (int): Stop after this many leaves, unbounded if None

    Returns:
        ExplorationResult: Leaves explored and any disagreement or stuck switch
    """
    logger = get_logger()
    result = ExplorationResult()
    stack = [(SwitchWorld(n), ())]
    while stack:
        world, path = stack.pop()
        pending = world.sim.pending_messages()[:width]
        if len(path) >= depth or not pending:
            _verdict(world, path, result)
            result.explored += 1
            if limit is not None and result.explored >= limit:
                break
            continue
        for envelope in pending:
            child = copy.deepcopy(world)
            child.sim.deliver_now(envelope.uid)
            stack.append((child, path + (f"{envelope.src}->{envelope.dst}:{type(envelope.payload).__name__}",)))
        if world.crashes < max_crashes and not world.replicas[world.proposer].crashed:
            child = copy.deepcopy(world)
            child.sim.crash_now(child.proposer)
            child.crashes += 1
            stack.append((child, path + (f"crash {child.proposer}",)))
    logger.debug(f"Explored {result.explored} schedules, {len(result.violations)} violations")
    return result
