#!/usr/bin/env python3
"""
Stop-and-Restart Baseline

A single external coordinator switches protocols the naive way: it tells
every node to stop accepting commands, waits until each node has drained
the old era, then tells every node to start the new protocol. Commands
submitted in between are rejected. The coordinator is a single point of
failure: if it crashes mid-switch the cluster stays stopped.
"""

from __future__ import annotations

from core.logger import Emoji, get_logger
from spectrum.errors import EraClosed
from spectrum.model import Command
from spectrum.runner import Cluster, finish

COORDINATOR_SITE = 0


class StopAndRestartCoordinator:
    """
    Args:
        cluster (Cluster): Unmanaged cluster whose eras the coordinator installs
        site (int): Node whose link delays the coordinator uses
    """

    def __init__(self, cluster, site=COORDINATOR_SITE):
        self.cluster = cluster
        self.sim = cluster.sim
        self.site = site
        self.logger = get_logger()
        self.era = 1
        self.target = None
        self.drained = set()
        self.crashed = False
        self.started = False
        for replica in cluster.replicas:
            replica.meta.on_drained = self._drained_hook(replica)

    def _drained_hook(self, replica):
        def report(era):
            self._to_coordinator(replica.node_id, self.on_drained, replica.node_id, era)
        return report

    # -- transport ---------------------------------------------------------------

    def _to_node(self, node, callback, *args):
        at = self.sim.now + self.sim.latency.base(self.site, node)
        self.sim.schedule(at, self._deliver_to_node, node, callback, args, label="coordinator")

    def _deliver_to_node(self, node, callback, args):
        if node in self.sim.crashed:
            return
        callback(*args)
        self.cluster.replicas[node].pump()

    def _to_coordinator(self, node, callback, *args):
        at = self.sim.now + self.sim.latency.base(node, self.site)
        self.sim.schedule(at, self._deliver_to_coordinator, callback, args, label="coordinator")

    def _deliver_to_coordinator(self, callback, args):
        if not self.crashed:
            callback(*args)

    # -- coordinator ----------------------------------------------------------------

    def crash(self):
        self.crashed = True
        self.sim.record(None, "coordinator-crash")
        self.logger.info(f"{Emoji.CRASH} coordinator crashed at t={self.sim.now / 1000:.1f}s")

    def begin_switch(self, target):
        if self.crashed:
            return
        self.target = target
        self.drained = set()
        self.sim.record(None, "coordinator-stop", era=self.era, target=target.value)
        for node in range(self.sim.n):
            self._to_node(node, self._stop, node, self.era)

    def on_drained(self, node, era):
        if era != self.era:
            return
        self.drained.add(node)
        if len(self.drained) < self.sim.n:
            return
        self.era += 1
        self.sim.record(None, "coordinator-start", era=self.era, target=self.target.value)
        for node in range(self.sim.n):
            self._to_node(node, self._start, node, self.era, self.target)

    # -- node side --------------------------------------------------------------------

    def _stop(self, node, era):
        replica = self.cluster.replicas[node]
        replica.gate_open = False
        self.sim.record(node, "gate-close", era=era)
        try:
            replica.meta.active_agreement.propose(Command.terminate(era))
        except EraClosed:
            pass

    def _start(self, node, era, target):
        replica = self.cluster.replicas[node]
        replica.meta.install_era(era, target)
        replica.meta.resume()
        replica.gate_open = True
        self.sim.record(node, "gate-open", era=era)


def run_stop_and_restart(scenario, registry=None, trace_messages=False):
    """
    Run a single-switch scenario under the stop-and-restart baseline.

    Returns:
        RunResult: status is STALLED when a node is still stopped at the end
    """
    cluster = Cluster(scenario, registry, managed=False, trace_messages=trace_messages)
    coordinator = StopAndRestartCoordinator(cluster)
    cluster.coordinator = coordinator
    for replica in cluster.replicas:
        replica.meta.install_era(1, scenario.initial_protocol)
    cluster.install_faults()
    for at, target in scenario.switches:
        cluster.sim.schedule(at, coordinator.begin_switch, target, label="switch")
    if scenario.crash_coordinator is not None:
        cluster.sim.schedule(scenario.crash_coordinator, coordinator.crash, label="crash")
    cluster.start_clients(0.0, scenario.duration)
    until = scenario.duration + scenario.grace
    cluster.sim.run(until=until)
    return finish(cluster, until)
