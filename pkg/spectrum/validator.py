#!/usr/bin/env python3
"""
Offline Safety Validator

Replays the decide, learn and switch events of a trace and checks the
safety properties of the run. Violations are report entries with the first
counterexample found, never exceptions.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations

from core.logger import get_logger
from spectrum.model import Command, cstruct_prefix_consistent, first_inconsistency


@dataclass
class CheckResult:
    name: str
    passed: bool
    counterexample: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def _label(encoded):
    return encoded.split("|", 1)[0]


class TraceView:
    """Per-node decide sequences and the other events the checks need."""

    def __init__(self, trace):
        self.decides = defaultdict(list)
        self.submitted = set()
        self.terminated = defaultdict(list)
        self.learned_slots = defaultdict(dict)
        self.era_decided = defaultdict(dict)
        for position, event in enumerate(trace):
            kind = event.kind
            if kind == "decide":
                self.decides[event.node].append(
                    (position, int(event["era"]), int(event["idx"]), event["cmd"]))
            elif kind == "submit":
                self.submitted.add(_label(event["cmd"]))
            elif kind == "terminate-deliver":
                self.terminated[event.node].append((position, int(event["era"])))
            elif kind == "learn" and event.get("slot") is not None:
                self.learned_slots[(int(event["era"]), int(event["slot"]))][event.node] = event["cmd"]
            elif kind == "era-decided":
                self.era_decided[int(event["era"])][event.node] = event["cmd"]

    def sequence(self, node):
        return [Command.decode(encoded) for _, _, _, encoded in self.decides[node]]


def check_non_triviality(view, history=None):
    submitted = set(view.submitted)
    if history is not None:
        submitted.update(r.cmd_id for r in history)
    for node, entries in sorted(view.decides.items()):
        for _, _, _, encoded in entries:
            if _label(encoded) not in submitted:
                return CheckResult("non-triviality", False,
                                   f"node {node} decided {_label(encoded)} which was never submitted")
    return CheckResult("non-triviality", True)


def check_stability(view):
    for node, entries in sorted(view.decides.items()):
        for expected, (_, _, idx, encoded) in enumerate(entries):
            if idx != expected:
                return CheckResult("stability", False,
                                   f"node {node} decided {_label(encoded)} at index {idx}, expected {expected}")
    return CheckResult("stability", True)


def check_exactly_once(view):
    for node, entries in sorted(view.decides.items()):
        seen = set()
        for _, _, _, encoded in entries:
            label = _label(encoded)
            if label in seen:
                return CheckResult("exactly-once", False, f"node {node} decided {label} twice")
            seen.add(label)
    return CheckResult("exactly-once", True)


def check_consistency(view):
    nodes = sorted(view.decides)
    sequences = {node: view.sequence(node) for node in nodes}
    for a, b in combinations(nodes, 2):
        if not cstruct_prefix_consistent(sequences[a], sequences[b]):
            where = first_inconsistency(sequences[a], sequences[b])
            if where is None:
                detail = f"nodes {a} and {b} diverge (duplicate decisions)"
            else:
                key, pos, left, right = where
                detail = (f"nodes {a} and {b} disagree on key {key} at position {pos}: "
                          f"{left[0]}:{left[1]} vs {right[0]}:{right[1]}")
            return CheckResult("consistency", False, detail)
    return CheckResult("consistency", True)


def check_cross_era_order(view):
    for node, entries in sorted(view.decides.items()):
        previous = 0
        for _, era, _, encoded in entries:
            if era < previous:
                return CheckResult("cross-era-order", False,
                                   f"node {node} decided {_label(encoded)} in era {era} after era {previous}")
            previous = era
    return CheckResult("cross-era-order", True)


def check_terminate_barrier(view):
    for node, entries in sorted(view.decides.items()):
        closed = {era: position for position, era in view.terminated.get(node, [])}
        first_era = min((era for _, era, _, _ in entries), default=1)
        for position, era, _, encoded in entries:
            if era in closed and position > closed[era]:
                return CheckResult("terminate-barrier", False,
                                   f"node {node} decided {_label(encoded)} in era {era} after its Terminate")
            if era > first_era:
                before = closed.get(era - 1)
                if before is None or before > position:
                    return CheckResult("terminate-barrier", False,
                                       f"node {node} decided {_label(encoded)} in era {era} "
                                       f"before Terminate of era {era - 1}")
    return CheckResult("terminate-barrier", True)


def check_slot_agreement(view):
    for (era, slot), by_node in sorted(view.learned_slots.items()):
        if len(set(by_node.values())) > 1:
            picks = ", ".join(f"{n}={c}" for n, c in sorted(by_node.items()))
            return CheckResult("slot-agreement", False, f"era {era} slot {slot}: {picks}")
    return CheckResult("slot-agreement", True)


def check_switch_agreement(view):
    for era, by_node in sorted(view.era_decided.items()):
        labels = {_label(c) for c in by_node.values()}
        if len(labels) > 1:
            return CheckResult("switch-agreement", False,
                               f"era {era} decided as {', '.join(sorted(labels))}")
    return CheckResult("switch-agreement", True)


def validate_history(trace, history=None):
    """
    Run every safety check over a trace.

    Args:
        trace (TraceLog): Trace of a complete run
        history (HistoryLog): Optional history; its submissions count as submitted

    Returns:
        ValidationReport: One CheckResult per property
    """
    logger = get_logger()
    view = TraceView(trace)
    report = ValidationReport([
        check_non_triviality(view, history),
        check_stability(view),
        check_consistency(view),
        check_exactly_once(view),
        check_cross_era_order(view),
        check_terminate_barrier(view),
        check_slot_agreement(view),
        check_switch_agreement(view),
    ])
    logger.debug(f"Validated {sum(len(v) for v in view.decides.values())} decisions "
                 f"on {len(view.decides)} nodes")
    return report
