#!/usr/bin/env python3
"""
Scenario Runner

Builds a simulated cluster from a Scenario (replicas, clients, oracle and
scripted faults), drives the simulation to the end of the run and collects
the trace, the history and the metrics.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from core.logger import Emoji, get_logger, log_run_summary
from spectrum.client import MIN_RETRANSMIT_MS, Client, HistoryLog, RetransmitPolicy
from spectrum.metrics import RunMetrics, summarize
from spectrum.model import ProtocolKind, classic_quorum_size
from spectrum.node import Replica
from spectrum.oracle import MetricsWindow, build_oracle
from spectrum.plugin_api import ProtocolRegistry
from spectrum.simnet import FaultScript, Simulation
from spectrum.trace import TraceLog
from spectrum.workload import generate_workload

STATUS_OK = "OK"
STATUS_INCOMPLETE = "INCOMPLETE"
STATUS_STALLED = "STALLED"

CALIBRATION_MS = 6_000.0
CALIBRATION_WARMUP_MS = 2_000.0
CALIBRATION_SEED = 0
_calibrated = {}


def _calibration_scenario(scenario, kind):
    return dataclasses.replace(
        scenario, name=f"calibrate-{kind.value.lower()}", seed=CALIBRATION_SEED,
        initial_protocol=kind, mode="spectrum", duration=CALIBRATION_MS, grace=0.0,
        clients_per_node=1, phases=[(0.0, 0.0)], switches=[], faults=FaultScript(),
        crash_leader_before_decide=set(), crash_coordinator=None, oracle="off",
        retransmit_timeout=CALIBRATION_MS, safety_suite=False)


def measured_p99(scenario, kind, registry=None):
    """
    p99 decide latency of `kind` on the scenario's network, conflict free and
    past bootstrap, from a short calibration run. Cached per network.
    """
    latency = scenario.latency_matrix()
    key = (tuple(map(tuple, latency.delay.tolist())), latency.jitter_fraction,
           scenario.suspicion_timeout, scenario.fifo, kind)
    if key not in _calibrated:
        cluster = Cluster(_calibration_scenario(scenario, kind), registry.fresh() if registry else None)
        cluster.bootstrap()
        cluster.start_clients(0.0)
        cluster.sim.run(until=CALIBRATION_MS)
        latencies = [lat for t, lat in cluster.history.latency_series() if t >= CALIBRATION_WARMUP_MS]
        _calibrated[key] = float(np.percentile(latencies, 99)) if latencies else CALIBRATION_MS
    return _calibrated[key]


def calibrate_retransmit(scenario, registry=None):
    """
    Retransmission policy of a run: four times the measured p99 decide
    latency of each registered family, floor one second. An explicit
    `retransmit_timeout` in the scenario applies to every family instead.
    """
    if scenario.retransmit_timeout:
        return RetransmitPolicy(fixed=scenario.retransmit_timeout)
    registry = registry or ProtocolRegistry.default()
    return RetransmitPolicy({kind: max(MIN_RETRANSMIT_MS, 4.0 * measured_p99(scenario, kind, registry))
                             for kind in registry.kinds()})


class Cluster:
    """
    Every moving part of one run, wired together but not started.

    Args:
        scenario (Scenario): Run description
        registry (ProtocolRegistry): Plugin factories, the default set if None
        managed (bool): False for stop-and-restart runs
        trace_messages (bool): Also trace every delivery and drop
    """

    def __init__(self, scenario, registry=None, managed=True, trace_messages=False):
        self.scenario = scenario
        self.logger = get_logger()
        self.trace = TraceLog()
        latency = scenario.latency_matrix()
        self.sim = Simulation(latency, scenario.suspicion_timeout, scenario.fifo, self.trace,
                              trace_messages)
        self.registry = registry or ProtocolRegistry.default()
        self.replicas = [Replica(i, self.sim, self.registry, scenario.seed, managed)
                         for i in range(self.sim.n)]
        self.history = HistoryLog()
        self.metrics = MetricsWindow(scenario.oracle_policy.window)
        self.workload = generate_workload(scenario.workload_spec(), scenario.seed, self.sim.n)
        self.retransmit = calibrate_retransmit(scenario, self.registry)
        self.clients = []
        for replica in self.replicas:
            for stream in self.workload.streams_of(replica.node_id):
                self.clients.append(Client(replica, stream, self.history, self.metrics,
                                           self.retransmit))
        self.oracle = build_oracle(scenario.oracle, self, self.workload, scenario.oracle_policy)
        self._crashed_before_decide = set()

    @property
    def n(self):
        return self.sim.n

    def lowest_correct(self):
        correct = self.sim.correct_nodes()
        return correct[0] if correct else None

    def request_switch(self, target):
        """Scripted switch: ask the lowest correct node, which forwards to its leader."""
        node = self.lowest_correct()
        if node is not None:
            self.sim.record(node, "switch-request", target=target.value)
            self.replicas[node].request_switch(target)

    def _crash_before_decide(self, meta, phase):
        era = phase.era
        if era not in self.scenario.crash_leader_before_decide or era in self._crashed_before_decide:
            return False
        self._crashed_before_decide.add(era)
        self.logger.info(f"{Emoji.CRASH} crashing meta leader {meta.node_id} before Decide of era {era}")
        self.sim.crash_now(meta.node_id)
        return True

    def start_clients(self, at=0.0, stop_at=None):
        for client in self.clients:
            client.start(at)
            if stop_at is not None:
                client.stop(stop_at)

    def install_faults(self):
        self.scenario.faults.install(self.sim)
        if self.scenario.crash_leader_before_decide:
            for replica in self.replicas:
                replica.meta.before_decide = self._crash_before_decide

    def bootstrap(self):
        """Decide era 1 through Meta-Consensus from node 0 at time zero."""
        self.sim.schedule(0.0, self.replicas[0].request_switch, self.scenario.initial_protocol,
                          label="bootstrap")

    def schedule_switches(self):
        for at, target in self.scenario.switches:
            self.sim.schedule(at, self.request_switch, target, label="switch")


@dataclass
class RunResult:
    scenario: object
    trace: TraceLog
    history: HistoryLog
    metrics: RunMetrics
    status: str
    virtual_time: float
    cluster: object = field(default=None, repr=False)

    def protocol_sequence(self):
        """Protocol families in era order, as decided by Meta-Consensus."""
        eras = {}
        for event in self.trace.of_kind("change-era"):
            eras.setdefault(int(event["era"]), ProtocolKind(event["target"]))
        return [eras[e] for e in sorted(eras)]

    def switch_times(self):
        """First time each era after the first was installed anywhere, in ms."""
        first = {}
        for event in self.trace.of_kind("change-era"):
            first.setdefault(int(event["era"]), event.t)
        return [first[e] for e in sorted(first) if e > 1]

    @property
    def ok(self):
        return self.status == STATUS_OK

    def write(self, directory):
        """Write trace.txt, history.csv and the metrics CSVs into directory."""
        from spectrum.metrics import emit_metrics
        self.trace.write(directory / "trace.txt")
        self.history.write_csv(directory / "history.csv")
        return emit_metrics(self.history, self.trace, directory)


def _status(cluster):
    correct = set(cluster.sim.correct_nodes())
    for replica in cluster.replicas:
        if replica.node_id in correct and not replica.gate_open:
            return STATUS_STALLED
    undecided = [r for r in cluster.history.undecided() if r.node in correct]
    return STATUS_INCOMPLETE if undecided else STATUS_OK


def finish(cluster, until):
    cluster.history.absorb_trace(cluster.trace)
    cluster.history.mark_horizon()
    metrics = summarize(cluster.history, cluster.trace, cluster.scenario.duration,
                        cluster.sim.correct_nodes())
    result = RunResult(cluster.scenario, cluster.trace, cluster.history, metrics,
                       _status(cluster), until, cluster)
    log_run_summary(result)
    return result


def run_scenario(scenario, registry=None, trace_messages=False):
    """
    Run one scenario to the end of its duration plus grace period.

    Stop-and-restart scenarios are handed to the baseline runner.

    Returns:
        RunResult: Trace, history, metrics and status of the run

    Raises:
        ScenarioError: If the scenario is inconsistent
        FaultScriptError: If the fault script breaks the crash budget
    """
    scenario.validate()
    if scenario.mode == "stop_and_restart":
        from spectrum.baseline import run_stop_and_restart
        return run_stop_and_restart(scenario, registry, trace_messages)

    cluster = Cluster(scenario, registry, managed=True, trace_messages=trace_messages)
    logger = get_logger()
    logger.debug(f"Running {scenario.name}: {cluster.n} nodes, quorum {classic_quorum_size(cluster.n)}, "
                 f"retransmit {cluster.retransmit.describe()}")
    cluster.bootstrap()
    cluster.install_faults()
    cluster.schedule_switches()
    if cluster.oracle is not None:
        cluster.oracle.start()
    cluster.start_clients(0.0, scenario.duration)
    until = scenario.duration + scenario.grace
    cluster.sim.run(until=until)
    return finish(cluster, until)
