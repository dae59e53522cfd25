#!/usr/bin/env python3
"""
Workload Tests

Phase schedule, conflict share and determinism of the client streams.
"""

from core.test_case import TestCase
from spectrum.errors import ConfigurationError
from spectrum.workload import ClientStream, WorkloadSpec, generate_workload, hot_key, private_key


class WorkloadTests(TestCase):
    """Tests for the contention knob."""

    def test_missing_initial_phase_is_conflict_free(self):
        spec = WorkloadSpec(2, [(30_000, 10)])
        self.assert_equals(spec.phases, [(0.0, 0.0), (30_000.0, 10.0)])
        self.assert_equals(spec.conflict_pct_at(0), 0.0)
        self.assert_equals(spec.phase_changes(), [(30_000.0, 10.0)])

    def test_phase_boundaries(self):
        spec = WorkloadSpec(1, [(0, 0), (30_000, 10), (95_000, 50)])
        self.assert_equals(spec.phase_at(29_999.9), 0)
        self.assert_equals(spec.phase_at(30_000), 1)
        self.assert_equals(spec.conflict_pct_at(94_000), 10.0)
        self.assert_equals(spec.conflict_pct_at(1e9), 50.0)

    def test_invalid_specs(self):
        self.assert_raises(ConfigurationError, WorkloadSpec, 1, [(10, 0), (5, 10)])
        self.assert_raises(ConfigurationError, WorkloadSpec, 1, [(0, 120)])
        self.assert_raises(ConfigurationError, WorkloadSpec, 1, [(0, 10)], 0)
        self.assert_raises(ConfigurationError, WorkloadSpec, -1)

    def test_private_key_always_present(self):
        stream = ClientStream(WorkloadSpec(1, [(0, 100)]), seed=3, node=2, index=0)
        for _ in range(50):
            cmd = stream.next_command(0)
            self.assert_contains(cmd.key_set, private_key("c2-0"))
            self.assert_contains(cmd.key_set, hot_key(0, 0))

    def test_zero_percent_never_conflicts(self):
        stream = ClientStream(WorkloadSpec(1, [(0, 0)]), seed=3, node=0, index=1)
        for _ in range(200):
            self.assert_equals(stream.next_command(0).key_set, frozenset({"k-c0-1"}))

    def test_conflict_share_follows_phase(self):
        stream = ClientStream(WorkloadSpec(1, [(0, 30)]), seed=11, node=1, index=0)
        hits = sum(1 for _ in range(2_000) if len(stream.next_command(0).key_set) == 2)
        self.assert_greater(hits, 500)
        self.assert_less(hits, 700)

    def test_hot_key_changes_with_phase(self):
        stream = ClientStream(WorkloadSpec(1, [(0, 100), (10_000, 100)], hot_keys=3), seed=0, node=0, index=0)
        early = {k for _ in range(30) for k in stream.next_command(5_000).key_set if k.startswith("hot-")}
        late = {k for _ in range(30) for k in stream.next_command(15_000).key_set if k.startswith("hot-")}
        self.assert_true(early <= {hot_key(0, i) for i in range(3)})
        self.assert_true(late <= {hot_key(1, i) for i in range(3)})
        self.assert_greater(len(early), 1, "Conflicting commands spread over the hot keys")

    def test_sequence_numbers_increase(self):
        stream = ClientStream(WorkloadSpec(1), seed=0, node=0, index=0)
        self.assert_equals([stream.next_command(0).cmd_id for _ in range(3)],
                           [("c0-0", 1), ("c0-0", 2), ("c0-0", 3)])

    def test_streams_are_deterministic(self):
        spec = WorkloadSpec(3, [(0, 40)])
        first = generate_workload(spec, 5, 4).schedule([0, 100, 200])
        again = generate_workload(spec, 5, 4).schedule([0, 100, 200])
        other = generate_workload(spec, 6, 4).schedule([0, 100, 200])
        self.assert_equals(first, again)
        self.assert_not_equals(first, other)

    def test_clients_per_node(self):
        workload = generate_workload(WorkloadSpec(3), 0, 5)
        self.assert_equals(len(workload.streams), 15)
        self.assert_equals([s.client_id for s in workload.streams_of(4)], ["c4-0", "c4-1", "c4-2"])

    def test_schedule_orders_by_time_then_client(self):
        plan = generate_workload(WorkloadSpec(2), 0, 2).schedule([0, 50])
        self.assert_equals([(t, cmd.cmd_id[0]) for t, cmd in plan],
                           [(0, "c0-0"), (0, "c0-1"), (0, "c1-0"), (0, "c1-1"),
                            (50, "c0-0"), (50, "c0-1"), (50, "c1-0"), (50, "c1-1")])
