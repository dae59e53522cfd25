#!/usr/bin/env python3
"""
Validator Tests

Every safety check must accept clean traces and catch the matching
mutation: reordered conflicting pairs, duplicated decisions, era order
inversions and the rest.
"""

from core.test_case import TestCase
from spectrum.model import Command, ProtocolKind
from spectrum.trace import TraceLog
from spectrum.validator import validate_history

A = Command.client("c0-0", 1, ["k-c0-0", "hot"])
B = Command.client("c1-0", 1, ["k-c1-0", "hot"])
C = Command.client("c2-0", 1, ["k-c2-0"])
D = Command.client("c0-0", 2, ["k-c0-0"])


def build_trace(sequences, terminate_after=None, submitted=(A, B, C, D)):
    """
    sequences maps node -> list of (era, cmd); terminate_after maps
    node -> list of (era, position) to insert terminate-deliver events
    before the decision at that position.
    """
    trace = TraceLog()
    t = 0.0
    for cmd in submitted:
        trace.record(t, 0, "submit", cmd=cmd, attempt=0)
        t += 1
    for node, decided in sorted(sequences.items()):
        barriers = dict(((pos, era) for era, pos in (terminate_after or {}).get(node, [])))
        for idx, (era, cmd) in enumerate(decided):
            if idx in barriers:
                trace.record(t, node, "terminate-deliver", era=barriers[idx])
            trace.record(t, node, "decide", era=era, idx=idx, cmd=cmd)
            t += 1
    return trace


class ValidatorTests(TestCase):
    """Tests for the offline safety validator."""

    def failed(self, trace):
        return [c.name for c in validate_history(trace).failures()]

    def test_clean_trace_passes(self):
        trace = build_trace({0: [(1, A), (1, B), (1, C)], 1: [(1, C), (1, A), (1, B)], 2: [(1, A)]})
        self.assert_equals(self.failed(trace), [])

    def test_swapped_conflicting_pair_detected(self):
        trace = build_trace({0: [(1, A), (1, B)], 1: [(1, B), (1, A)]})
        self.assert_equals(self.failed(trace), ["consistency"])
        report = validate_history(trace)
        self.assert_contains(report.check("consistency").counterexample, "hot")

    def test_divergent_prefixes_detected(self):
        trace = build_trace({0: [(1, A)], 1: [(1, B)]})
        self.assert_equals(self.failed(trace), ["consistency"])

    def test_duplicate_decide_detected(self):
        trace = build_trace({0: [(1, A), (1, C), (1, A)]})
        self.assert_contains(self.failed(trace), "exactly-once")

    def test_unsubmitted_command_detected(self):
        ghost = Command.client("ghost", 1, ["x"])
        trace = build_trace({0: [(1, A), (1, ghost)]})
        self.assert_equals(self.failed(trace), ["non-triviality"])

    def test_history_counts_as_submitted(self):
        from spectrum.client import HistoryLog
        ghost = Command.client("ghost", 1, ["x"])
        history = HistoryLog()
        history.submitted(ghost, 0.0, 0)
        trace = build_trace({0: [(1, ghost)]})
        self.assert_true(validate_history(trace, history).passed)

    def test_index_gap_detected(self):
        trace = build_trace({0: [(1, A)]})
        trace.record(100.0, 0, "decide", era=1, idx=5, cmd=C)
        self.assert_equals(self.failed(trace), ["stability"])

    def test_era_inversion_detected(self):
        trace = build_trace({0: [(1, A), (2, C), (1, D)]}, terminate_after={0: [(1, 1)]})
        self.assert_contains(self.failed(trace), "cross-era-order")

    def test_decide_after_terminate_detected(self):
        trace = build_trace({0: [(1, A), (1, C), (2, D)]}, terminate_after={0: [(1, 1)]})
        self.assert_equals(self.failed(trace), ["terminate-barrier"])

    def test_new_era_before_terminate_detected(self):
        trace = build_trace({0: [(1, A), (2, C)]})
        self.assert_equals(self.failed(trace), ["terminate-barrier"])

    def test_terminate_between_eras_passes(self):
        trace = build_trace({0: [(1, A), (2, C), (2, D)], 1: [(1, A), (2, D), (2, C)]},
                            terminate_after={0: [(1, 1)], 1: [(1, 1)]})
        self.assert_equals(self.failed(trace), [])

    def test_slot_disagreement_detected(self):
        trace = build_trace({0: [(1, A)]})
        trace.record(50.0, 1, "learn", era=1, cmd=A.label, slot=0)
        trace.record(51.0, 2, "learn", era=1, cmd=B.label, slot=0)
        self.assert_equals(self.failed(trace), ["slot-agreement"])

    def test_switch_disagreement_detected(self):
        trace = build_trace({})
        trace.record(10.0, 0, "era-decided", era=2, target="DEMOCRATIC",
                     cmd=Command.switch(ProtocolKind.DEMOCRATIC, 0, 1))
        trace.record(11.0, 1, "era-decided", era=2, target="OLIGARCHIC",
                     cmd=Command.switch(ProtocolKind.OLIGARCHIC, 1, 1))
        self.assert_equals(self.failed(trace), ["switch-agreement"])

    def test_report_names_every_check(self):
        names = [c.name for c in validate_history(TraceLog()).checks]
        self.assert_equals(names, ["non-triviality", "stability", "consistency", "exactly-once",
                                   "cross-era-order", "terminate-barrier", "slot-agreement",
                                   "switch-agreement"])

    def test_trace_file_round_trip_keeps_verdict(self):
        import tempfile
        from pathlib import Path
        trace = build_trace({0: [(1, A), (1, B)], 1: [(1, B), (1, A)]})
        with tempfile.TemporaryDirectory() as tmp:
            path = trace.write(Path(tmp) / "trace.txt")
            self.assert_equals(self.failed(TraceLog.load(path)), ["consistency"])

    def test_real_run_is_clean(self):
        scenario = self.runner.scenario(
            "nodes 5;\nduration 6s;\ngrace 4s;\nlatency wan;\nclients_per_node 2;\n"
            "phase 0s 30;\nswitch 2s DEMOCRATIC;\nswitch 4s OLIGARCHIC;", "validator-run")
        result = self.runner.run(scenario)
        report = self.runner.validate(result)
        self.assert_true(report.passed, f"violations: {[c.counterexample for c in report.failures()]}")
        self.assert_greater(result.history.decided_count(), 10)
