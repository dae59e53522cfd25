#!/usr/bin/env python3
"""
Switching Oracle

Metrics-driven policy that decides when the cluster should run another
protocol family. It observes latencies and submissions in a sliding window
of virtual time, votes per node and sends a Switch proposal to Meta-Consensus
when the winning family differs from the one in force.
"""

from __future__ import annotations

from collections import Counter, defaultdict, deque
from dataclasses import dataclass

import numpy as np

from core.logger import Emoji, get_logger
from spectrum.errors import ConfigurationError
from spectrum.model import ProtocolKind, classic_quorum_size, fast_quorum_size

LOW_CONTENTION = 10.0
HIGH_CONTENTION = 50.0


@dataclass
class OraclePolicy:
    """Thresholds and timing of the oracle; times are virtual ms."""

    low: float = LOW_CONTENTION
    high: float = HIGH_CONTENTION
    window: float = 10_000.0
    period: float = 1_000.0
    cooldown: float = 20_000.0
    delay: float = 35_000.0
    use_latency: bool = False

    def __post_init__(self):
        if not 0 <= self.low < self.high <= 100:
            raise ConfigurationError(f"Contention thresholds out of order: {self.low}, {self.high}")
        if self.cooldown <= 0 or self.window <= 0 or self.period <= 0:
            raise ConfigurationError("Oracle window, period and cooldown must be positive")


def choose_best_by_contention(contention, policy=None):
    """
    Args:
        contention (float): Percentage of conflicting submissions in [0, 100]

    Returns:
        ProtocolKind: Family suited to that contention level
    """
    policy = policy or OraclePolicy()
    if contention < policy.low:
        return ProtocolKind.OLIGARCHIC
    if contention < policy.high:
        return ProtocolKind.DEMOCRATIC
    return ProtocolKind.MONARCHIC


def choose_best_by_latency(latency, qrtt, fqrtt, frtt):
    """
    Pick a family from a node's p90 latency and its quorum round trips.

    A latency equal to qrtt + frtt still counts as DEMOCRATIC.
    """
    if latency < fqrtt:
        return ProtocolKind.OLIGARCHIC
    if latency <= qrtt + frtt:
        return ProtocolKind.DEMOCRATIC
    return ProtocolKind.MONARCHIC


def quorum_round_trips(latency, node, leader):
    """
    Returns:
        tuple: (QRTT, FQRTT, FRTT) of `node` from the latency matrix: round
            trips to the cheapest classic quorum, the cheapest fast quorum and
            the leader
    """
    n = latency.n
    rtts = sorted(latency.rtt(node, j) for j in range(n) if j != node)
    rtts = [0.0] + rtts
    qrtt = rtts[classic_quorum_size(n) - 1]
    fqrtt = rtts[fast_quorum_size(n) - 1]
    frtt = latency.rtt(node, leader) if leader != node else 0.0
    return qrtt, fqrtt, frtt


def mode_vote(votes):
    """Most frequent family; ties go to the lowest rank."""
    if not votes:
        return None
    counts = Counter(votes)
    best = max(counts.values())
    return min((kind for kind, c in counts.items() if c == best), key=lambda k: k.rank)


class MetricsWindow:
    """Sliding window of client latencies and first submissions per node."""

    def __init__(self, window=10_000.0):
        self.window = window
        self.latencies = defaultdict(deque)
        self.submissions = deque()

    def record_latency(self, t, node, latency):
        self.latencies[node].append((t, latency))

    def record_submission(self, t, node, cmd):
        self.submissions.append((t, node, cmd.cmd_id[0], cmd.key_set))

    def _prune(self, now):
        low = now - self.window
        while self.submissions and self.submissions[0][0] < low:
            self.submissions.popleft()
        for samples in self.latencies.values():
            while samples and samples[0][0] < low:
                samples.popleft()

    def p90(self, now, node):
        """p90 latency at `node`, or None without samples."""
        self._prune(now)
        samples = self.latencies.get(node)
        if not samples:
            return None
        return float(np.percentile([lat for _, lat in samples], 90))

    def contention(self, now, node=None):
        """
        Percentage of submissions in the window that share a key with a
        submission of another client; None without submissions.
        """
        self._prune(now)
        clients_by_key = defaultdict(set)
        for _, _, client, keys in self.submissions:
            for key in keys:
                clients_by_key[key].add(client)
        counted = [(client, keys) for _, origin, client, keys in self.submissions
                   if node is None or origin == node]
        if not counted:
            return None
        hits = sum(1 for client, keys in counted
                   if any(len(clients_by_key[k] - {client}) > 0 for k in keys))
        return 100.0 * hits / len(counted)


class Oracle:
    """
    Adaptive oracle: measures contention and latency from the window.

    Args:
        cluster: Object exposing sim, replicas and metrics (a Cluster)
        policy (OraclePolicy): Thresholds and timing
    """

    name = "adaptive"

    def __init__(self, cluster, policy=None):
        self.cluster = cluster
        self.sim = cluster.sim
        self.policy = policy or OraclePolicy()
        self.logger = get_logger()
        self.band = None
        self.detected_at = None
        self.last_trigger = None
        self.triggers = []

    def start(self):
        self.sim.schedule(self.sim.now + self.policy.period, self._tick, label="oracle")

    def _tick(self):
        self.on_metrics_change()
        self.sim.schedule(self.sim.now + self.policy.period, self._tick, label="oracle")

    def contention(self, node):
        return self.cluster.metrics.contention(self.sim.now, node)

    def system_contention(self):
        return self.cluster.metrics.contention(self.sim.now)

    def _leader(self):
        correct = self.sim.correct_nodes()
        return self.sim.omega_leader(correct[0]) if correct else None

    def current_kind(self):
        leader = self._leader()
        if leader is None:
            return None
        return self.cluster.replicas[leader].meta.current_kind()

    def contention_votes(self):
        votes = []
        for node in self.sim.correct_nodes():
            value = self.contention(node)
            if value is not None:
                votes.append(choose_best_by_contention(value, self.policy))
        return votes

    def latency_votes(self):
        votes = []
        leader = self._leader()
        for node in self.sim.correct_nodes():
            p90 = self.cluster.metrics.p90(self.sim.now, node)
            if p90 is None:
                continue
            qrtt, fqrtt, frtt = quorum_round_trips(self.sim.latency, node, leader)
            votes.append(choose_best_by_latency(p90, qrtt, fqrtt, frtt))
        return votes

    def on_metrics_change(self):
        """
        Returns:
            ProtocolKind | None: Target of the Switch proposal sent, if any
        """
        now = self.sim.now
        system = self.system_contention()
        if system is not None:
            band = choose_best_by_contention(system, self.policy)
            if self.band is None:
                self.band = band
            elif band is not self.band:
                self.band = band
                self.detected_at = now
                self.sim.record(None, "oracle-detect", contention=round(system, 2), band=band.value)

        if self.last_trigger is not None and now - self.last_trigger < self.policy.cooldown:
            return None
        if self.detected_at is not None:
            if now - self.detected_at < self.policy.delay:
                return None
            self.detected_at = None
            target = mode_vote(self.contention_votes())
        elif self.policy.use_latency:
            target = mode_vote(self.latency_votes())
        else:
            return None

        current = self.current_kind()
        if target is None or current is None or target is current:
            return None
        return self._trigger(target)

    def _trigger(self, target):
        leader = self._leader()
        self.last_trigger = self.sim.now
        self.triggers.append((self.sim.now, target))
        self.sim.record(leader, "oracle-trigger", target=target.value)
        self.logger.info(f"{Emoji.SWITCH} oracle proposes {target.value} at t={self.sim.now / 1000:.1f}s")
        self.cluster.replicas[leader].request_switch(target)
        return target


class StaticOracle(Oracle):
    """Scripted oracle: contention is the configured workload phase percentage."""

    name = "static"

    def __init__(self, cluster, workload, policy=None):
        super().__init__(cluster, policy)
        self.workload = workload

    def contention(self, node):
        return self.workload.conflict_pct_at(self.sim.now)

    def system_contention(self):
        return self.workload.conflict_pct_at(self.sim.now)


def build_oracle(mode, cluster, workload, policy):
    """
    Raises:
        ConfigurationError: If mode is not off, static or adaptive
    """
    if mode == "off":
        return None
    if mode == "static":
        return StaticOracle(cluster, workload, policy)
    if mode == "adaptive":
        return Oracle(cluster, policy)
    raise ConfigurationError(f"Unknown oracle mode '{mode}'")
