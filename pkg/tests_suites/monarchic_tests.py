#!/usr/bin/env python3
"""
Monarchic Tests

Leader-ordered slot log: one total order at every node, leader failover.
"""

from core.test_case import TestCase
from spectrum.model import ProtocolKind
from spectrum.validator import validate_history


class MonarchicTests(TestCase):
    """Tests for the single-leader plugin."""

    def setup(self):
        self.sim, self.replicas = self.runner.cluster(n=5, kind=ProtocolKind.MONARCHIC)

    def submit_round(self, count, start=0):
        cmds = []
        for i in range(count):
            node = (start + i) % 5
            key = "x" if i % 2 else "y"
            cmds.append(self.runner.submit(self.sim, self.replicas[node], f"c{node}", start + i, [key]))
        return cmds

    def test_bootstrap_installs_era_one(self):
        for replica in self.replicas:
            self.assert_equals(replica.meta.current_kind(), ProtocolKind.MONARCHIC,
                               f"node {replica.node_id} era 1 kind")

    def test_one_total_order_everywhere(self):
        cmds = self.submit_round(10)
        self.runner.run_for(self.sim, 2_000)
        reference = self.runner.decided_labels(self.replicas[0])
        self.assert_equals(sorted(reference), sorted(c.label for c in cmds))
        for replica in self.replicas[1:]:
            self.assert_equals(self.runner.decided_labels(replica), reference,
                               f"node {replica.node_id} order")
        self.assert_true(validate_history(self.sim.trace).passed)

    def test_learn_follows_slots(self):
        self.submit_round(6)
        self.runner.run_for(self.sim, 2_000)
        slots = [int(e["slot"]) for e in self.sim.trace.of_kind("learn")
                 if e.node == 3 and e["era"] == "1"]
        self.assert_equals(slots, list(range(len(slots))))
        self.assert_equals(len(slots), 6)

    def test_duplicate_submission_decided_once(self):
        cmd = self.runner.submit(self.sim, self.replicas[1], "c1", 1, ["x"])
        self.replicas[1].submit(cmd, attempt=1)
        self.replicas[3].submit(cmd, attempt=2)
        self.runner.run_for(self.sim, 2_000)
        for replica in self.replicas:
            self.assert_equals(self.runner.decided_labels(replica), ["c1:1"])

    def test_resubmitting_decided_command_notifies_again(self):
        cmd = self.runner.submit(self.sim, self.replicas[2], "c2", 1, ["x"])
        self.runner.run_for(self.sim, 1_000)
        self.assert_true(self.replicas[2].submit(cmd, attempt=1))
        self.runner.run_for(self.sim, 1_000)
        self.assert_equals(self.runner.decided_labels(self.replicas[2]), ["c2:1"])

    def test_leader_crash_keeps_ordering(self):
        self.submit_round(4)
        self.runner.run_for(self.sim, 1_000)
        self.sim.crash(0)
        late = self.runner.submit(self.sim, self.replicas[2], "c2", 100, ["x"])
        self.runner.run_for(self.sim, 5_000)
        reference = self.runner.decided_labels(self.replicas[1])
        self.assert_contains(reference, late.label)
        for replica in self.replicas[2:]:
            self.assert_equals(self.runner.decided_labels(replica), reference,
                               f"node {replica.node_id} order")
        self.assert_true(validate_history(self.sim.trace).passed)

    def test_new_leader_prepares_higher_ballot(self):
        self.sim.crash(0)
        self.runner.run_for(self.sim, 1_000)
        prepares = [e for e in self.sim.trace.of_kind("prepare") if e.node == 1]
        self.assert_true(prepares, "node 1 never ran a prepare phase")
        self.assert_equals(int(prepares[0]["ballot"]) % 5, 1, "Ballots of node 1 are 1 mod n")
        agreement = self.replicas[1].meta.active_agreement
        self.assert_true(agreement.leading, "node 1 should lead era 1")

    def decided_at(self, sim, node, label):
        for event in sim.trace.of_kind("decide"):
            if event.node == node and str(event["cmd"]).split("|", 1)[0] == label:
                return event.t
        return None

    def submitted_at(self, sim, node, label):
        for event in sim.trace.of_kind("submit"):
            if event.node == node and str(event["cmd"]).split("|", 1)[0] == label:
                return event.t
        return None

    def test_non_leader_pays_one_forwarding_round_trip(self):
        sim, replicas = self.runner.cluster(n=5, kind=ProtocolKind.MONARCHIC, wan=True)
        at_leader = self.runner.submit(sim, replicas[0], "c0", 1, ["x"])
        self.runner.run_for(sim, 500)
        forwarded = self.runner.submit(sim, replicas[2], "c2", 1, ["y"])
        self.runner.run_for(sim, 1_000)
        leader_latency = self.decided_at(sim, 0, at_leader.label) - self.submitted_at(sim, 0, at_leader.label)
        other_latency = self.decided_at(sim, 2, forwarded.label) - self.submitted_at(sim, 2, forwarded.label)
        self.assert_almost_equals(other_latency - leader_latency, sim.latency.rtt(2, 0), 1e-6,
                                  f"leader {leader_latency}ms, node 2 {other_latency}ms")

    def test_value_accepted_by_quorum_survives_leader_crash(self):
        start = self.sim.now
        cmd = self.runner.submit(self.sim, self.replicas[0], "c0", 1, ["x"])
        # Accepts land at +10ms; the acks would reach the leader at +20ms
        self.sim.schedule(start + 15, self.sim.crash, 0, label="crash")
        self.runner.run_for(self.sim, 3_000)
        for replica in self.replicas[1:]:
            self.assert_equals(self.runner.decided_labels(replica), [cmd.label],
                               f"node {replica.node_id} decisions")
        learns = [e for e in self.sim.trace.of_kind("learn") if e["cmd"] == cmd.label]
        self.assert_equals(len({e["slot"] for e in learns}), 1, "Re-proposed in another slot")
        self.assert_true(all(e.t > start + 15 for e in learns), "Decided before the crash")
        self.assert_true([e for e in self.sim.trace.of_kind("leader") if e.node == 1],
                         "node 1 never took over")
        self.assert_true(validate_history(self.sim.trace).passed)
