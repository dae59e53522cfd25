#!/usr/bin/env python3
"""
Oracle Tests

Contention and latency policies, the sliding metrics window and the timing
of oracle-triggered switches.
"""

from core.test_case import TestCase
from spectrum.errors import ConfigurationError
from spectrum.model import Command, ProtocolKind
from spectrum.oracle import (MetricsWindow, OraclePolicy, build_oracle, choose_best_by_contention,
                             choose_best_by_latency, mode_vote, quorum_round_trips)
from spectrum.simnet import LatencyMatrix

OLIGARCHIC, DEMOCRATIC, MONARCHIC = ProtocolKind.OLIGARCHIC, ProtocolKind.DEMOCRATIC, ProtocolKind.MONARCHIC

TIMING_SCENARIO = """
nodes 5;
duration 15s;
grace 5s;
initial_protocol {initial};
latency uniform 10;
jitter 0;
clients_per_node 1;
{phases}
oracle static;
oracle_delay {delay};
oracle_cooldown {cooldown};
"""


class OracleTests(TestCase):
    """Tests for the switching policy."""

    def run_timing(self, initial, phases, delay="3s", cooldown="2s"):
        text = TIMING_SCENARIO.format(initial=initial, phases=phases, delay=delay, cooldown=cooldown)
        return self.runner.run(self.runner.scenario(text, "oracle-timing"))

    def test_contention_thresholds(self):
        self.assert_equals(choose_best_by_contention(0), OLIGARCHIC)
        self.assert_equals(choose_best_by_contention(9.99), OLIGARCHIC)
        self.assert_equals(choose_best_by_contention(10), DEMOCRATIC)
        self.assert_equals(choose_best_by_contention(49.9), DEMOCRATIC)
        self.assert_equals(choose_best_by_contention(50), MONARCHIC)
        self.assert_equals(choose_best_by_contention(100), MONARCHIC)

    def test_custom_thresholds(self):
        policy = OraclePolicy(low=5, high=20)
        self.assert_equals(choose_best_by_contention(7, policy), DEMOCRATIC)
        self.assert_equals(choose_best_by_contention(25, policy), MONARCHIC)

    def test_policy_validation(self):
        self.assert_raises(ConfigurationError, OraclePolicy, low=60, high=50)
        self.assert_raises(ConfigurationError, OraclePolicy, cooldown=0)
        self.assert_raises(ConfigurationError, build_oracle, "psychic", None, None, None)

    def test_latency_policy_boundaries(self):
        self.assert_equals(choose_best_by_latency(50, qrtt=76, fqrtt=90, frtt=24), OLIGARCHIC)
        self.assert_equals(choose_best_by_latency(90, qrtt=76, fqrtt=90, frtt=24), DEMOCRATIC)
        self.assert_equals(choose_best_by_latency(100, qrtt=76, fqrtt=90, frtt=24), DEMOCRATIC,
                           "Latency equal to QRTT + FRTT stays democratic")
        self.assert_equals(choose_best_by_latency(101, qrtt=76, fqrtt=90, frtt=24), MONARCHIC)

    def test_quorum_round_trips_on_wan(self):
        latency = LatencyMatrix.wan(5)
        self.assert_equals(quorum_round_trips(latency, 0, 0), (76.0, 90.0, 0.0))
        self.assert_equals(quorum_round_trips(latency, 4, 0), (120.0, 190.0, 190.0))

    def test_mode_vote_breaks_ties_by_rank(self):
        self.assert_equals(mode_vote([MONARCHIC, DEMOCRATIC, MONARCHIC]), MONARCHIC)
        self.assert_equals(mode_vote([MONARCHIC, DEMOCRATIC]), DEMOCRATIC)
        self.assert_equals(mode_vote([MONARCHIC, OLIGARCHIC, DEMOCRATIC]), OLIGARCHIC)
        self.assert_is_none(mode_vote([]))

    def test_window_contention(self):
        window = MetricsWindow(window=10_000)
        window.record_submission(100, 0, Command.client("a", 1, ["k-a", "hot"]))
        window.record_submission(200, 1, Command.client("b", 1, ["k-b", "hot"]))
        window.record_submission(300, 1, Command.client("c", 1, ["k-c"]))
        self.assert_almost_equals(window.contention(1_000), 200 / 3, 1e-9)
        self.assert_almost_equals(window.contention(1_000, node=1), 50.0, 1e-9)
        self.assert_is_none(window.contention(1_000, node=4))

    def test_same_client_does_not_conflict_with_itself(self):
        window = MetricsWindow()
        window.record_submission(0, 0, Command.client("a", 1, ["k-a"]))
        window.record_submission(10, 0, Command.client("a", 2, ["k-a"]))
        self.assert_equals(window.contention(20), 0.0)

    def test_window_forgets_old_samples(self):
        window = MetricsWindow(window=1_000)
        window.record_submission(0, 0, Command.client("a", 1, ["hot"]))
        window.record_submission(50, 0, Command.client("b", 1, ["hot"]))
        window.record_latency(0, 0, 40.0)
        self.assert_equals(window.contention(500), 100.0)
        self.assert_is_none(window.contention(5_000))
        self.assert_is_none(window.p90(5_000, 0))

    def test_window_p90(self):
        window = MetricsWindow()
        for i in range(1, 11):
            window.record_latency(i, 2, 10.0 * i)
        self.assert_almost_equals(window.p90(100, 2), 91.0, 1e-9)

    def test_switch_after_observation_delay(self):
        result = self.run_timing("OLIGARCHIC", "phase 0s 0;\nphase 5s 10;")
        self.assert_equals(result.cluster.oracle.triggers, [(8_000.0, DEMOCRATIC)])
        self.assert_equals(result.protocol_sequence(), [OLIGARCHIC, DEMOCRATIC])
        detect = result.trace.of_kind("oracle-detect")
        self.assert_equals([e.t for e in detect], [5_000.0])

    def test_cooldown_postpones_second_switch(self):
        result = self.run_timing("OLIGARCHIC", "phase 0s 0;\nphase 3s 60;\nphase 6s 0;",
                                 delay="1s", cooldown="5s")
        self.assert_equals(result.cluster.oracle.triggers, [(4_000.0, MONARCHIC), (9_000.0, OLIGARCHIC)])
        self.assert_equals(result.protocol_sequence(), [OLIGARCHIC, MONARCHIC, OLIGARCHIC])

    def test_no_switch_when_best_is_running(self):
        result = self.run_timing("MONARCHIC", "phase 0s 60;")
        self.assert_equals(result.cluster.oracle.triggers, [])
        self.assert_equals(result.protocol_sequence(), [MONARCHIC])
