#!/usr/bin/env python3
"""
Simulated Network Tests

Virtual time, delivery, jitter, crashes, failure detection and replay.
"""

from core.test_case import TestCase
from spectrum.errors import FaultScriptError, UsageError
from spectrum.simnet import FaultScript, LatencyMatrix, Simulation
from spectrum.trace import END, TraceLog


class Recorder:
    """Minimal node handler that remembers what it saw."""

    def __init__(self, sim, node_id):
        self.sim = sim
        self.node_id = node_id
        self.received = []
        self.leaders = []
        sim.attach(node_id, self)

    def on_message(self, src, payload):
        self.received.append((self.sim.now, src, payload))

    def on_leader_change(self, leader):
        self.leaders.append((self.sim.now, leader))


def build(n=3, delay=10.0, jitter=0.0, seed=0, **kwargs):
    sim = Simulation(LatencyMatrix.uniform(n, delay, seed, jitter), **kwargs)
    return sim, [Recorder(sim, i) for i in range(n)]


class SimnetTests(TestCase):
    """Tests for the deterministic simulator."""

    def test_message_arrives_after_link_delay(self):
        sim, nodes = build(delay=25.0)
        sim.send(0, 1, "ping")
        sim.run()
        self.assert_equals(nodes[1].received, [(25.0, 0, "ping")])

    def test_broadcast_includes_sender(self):
        sim, nodes = build()
        sim.broadcast(1, "hello")
        sim.run()
        for node in nodes:
            self.assert_equals(len(node.received), 1, f"node {node.node_id} deliveries")
        self.assert_equals(nodes[1].received[0][0], 0.0, "Local delivery is immediate")

    def test_broadcast_can_skip_sender(self):
        sim, nodes = build()
        sim.broadcast(1, "hello", include_self=False)
        sim.run()
        self.assert_equals(nodes[1].received, [])

    def test_jitter_is_bounded_and_deterministic(self):
        latency = LatencyMatrix.uniform(3, 100.0, seed=7, jitter_fraction=0.2)
        for uid in range(50):
            sample = latency.sample(0, 1, uid)
            self.assert_less_equal(100.0, sample)
            self.assert_less_equal(sample, 120.0)
            self.assert_equals(sample, LatencyMatrix.uniform(3, 100.0, 7, 0.2).sample(0, 1, uid))

    def test_invalid_latency_matrix(self):
        self.assert_raises(UsageError, LatencyMatrix, [[0, 10], [10, 0], [5, 5]])
        self.assert_raises(UsageError, LatencyMatrix, [[0, 0], [10, 0]])
        self.assert_raises(UsageError, LatencyMatrix.uniform, 3, 10.0, 0, 1.5)

    def test_wan_matrix_is_symmetric(self):
        latency = LatencyMatrix.wan(5)
        for i in range(5):
            for j in range(5):
                self.assert_equals(latency.base(i, j), latency.base(j, i))
        self.assert_equals(latency.max_delay, 110.0)

    def test_timers_fire_in_order(self):
        sim, _ = build()
        fired = []
        sim.set_timer(0, 30, fired.append, "late")
        sim.set_timer(0, 10, fired.append, "early")
        sim.schedule(20, fired.append, "middle")
        sim.run()
        self.assert_equals(fired, ["early", "middle", "late"])

    def test_cancelled_timer_does_not_fire(self):
        sim, _ = build()
        fired = []
        timer = sim.set_timer(0, 10, fired.append, "x")
        timer.cancel()
        sim.run()
        self.assert_equals(fired, [])

    def test_crashed_node_stops_receiving_and_sending(self):
        sim, nodes = build()
        sim.send(0, 1, "before")
        sim.crash(1)
        sim.send(1, 2, "from the dead")
        sim.run()
        self.assert_equals(nodes[1].received, [])
        self.assert_equals(nodes[2].received, [])

    def test_crashed_node_timers_are_skipped(self):
        sim, _ = build()
        fired = []
        sim.set_timer(1, 10, fired.append, "node timer")
        sim.schedule(10, fired.append, "harness action")
        sim.crash(1)
        sim.run()
        self.assert_equals(fired, ["harness action"])

    def test_double_crash_rejected(self):
        sim, _ = build()
        sim.crash(2)
        self.assert_raises(FaultScriptError, sim.crash_now, 2)

    def test_leader_moves_after_suspicion_timeout(self):
        sim, nodes = build(delay=10.0, suspicion_timeout=100.0)
        sim.crash(0, at=50.0)
        sim.run()
        self.assert_equals(sim.omega_leader(1), 1)
        self.assert_equals(sim.omega_leader(2), 1)
        self.assert_equals(nodes[2].leaders, [(160.0, 1)], "Suspected at crash + timeout + link delay")

    def test_default_suspicion_timeout(self):
        sim, _ = build(delay=20.0)
        self.assert_equals(sim.suspicion_timeout, 80.0)

    def test_false_suspicion_is_transient(self):
        sim, nodes = build(suspicion_timeout=100.0)
        sim.false_suspicion(0, at=10.0)
        sim.run(until=50.0)
        self.assert_equals(sim.omega_leader(2), 1)
        sim.run()
        self.assert_equals(sim.omega_leader(2), 0)
        self.assert_equals([leader for _, leader in nodes[2].leaders], [1, 0])

    def test_fifo_links_keep_send_order(self):
        sim, nodes = build(delay=10.0, jitter=1.0, seed=3, fifo=True)
        for i in range(20):
            sim.send(0, 1, i)
        sim.run()
        self.assert_equals([payload for _, _, payload in nodes[1].received], list(range(20)))

    def test_run_until_stops_the_clock(self):
        sim, nodes = build(delay=100.0)
        sim.send(0, 1, "slow")
        sim.run(until=50.0)
        self.assert_equals(sim.now, 50.0)
        self.assert_equals(nodes[1].received, [])
        self.assert_equals(sim.pending(), 1)

    def test_step_on_empty_queue(self):
        sim, _ = build()
        self.assert_true(sim.step() is END)

    def test_deliver_now_reorders(self):
        sim, nodes = build(delay=10.0)
        sim.send(0, 1, "first")
        late = sim.send(2, 1, "second")
        sim.deliver_now(late.uid)
        sim.run()
        self.assert_equals([payload for _, _, payload in nodes[1].received], ["second", "first"])
        self.assert_raises(UsageError, sim.deliver_now, late.uid)

    def test_same_seed_same_trace(self):
        def run(seed):
            trace = TraceLog()
            sim, _ = build(n=4, delay=30.0, jitter=0.5, seed=seed, trace=trace, trace_messages=True)
            for i in range(10):
                sim.broadcast(i % 4, i)
            sim.crash(3, at=15.0)
            sim.run()
            return trace.lines()

        self.assert_equals(run(11), run(11))
        self.assert_not_equals(run(11), run(12), "Jitter must depend on the seed")

    def test_fault_script_budget(self):
        script = FaultScript().add(10, "crash", 0).add(20, "crash", 1).add(30, "crash", 2)
        self.assert_raises(FaultScriptError, script.validate, 5, True)
        script.validate(5, safety_suite=False)
        self.assert_raises(FaultScriptError, FaultScript().add, 1, "reboot", 0)

    def test_fault_script_rejects_unknown_node(self):
        self.assert_raises(FaultScriptError, FaultScript().add(1, "crash", 9).validate, 5)
