#!/usr/bin/env python3
"""
Trace

Timestamped records of submissions, learns, decisions and switches.
One event per line: t|node|event_kind|details, details being k=v pairs
joined by ';'. Commands are embedded with their canonical encoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from spectrum.errors import UsageError


class _End:
    """Returned by Simulation.step() once nothing is left to dispatch."""

    def __repr__(self):
        return "END"

    def __bool__(self):
        return False


END = _End()


@dataclass(frozen=True)
class TraceEvent:
    t: float
    node: int | None
    kind: str
    details: tuple = ()

    def get(self, key, default=None):
        for k, v in self.details:
            if k == key:
                return v
        return default

    def __getitem__(self, key):
        value = self.get(key)
        if value is None:
            raise KeyError(key)
        return value

    def encode(self):
        node = "-" if self.node is None else str(self.node)
        details = ";".join(f"{k}={v}" for k, v in self.details)
        return f"{self.t:.3f}|{node}|{self.kind}|{details}"

    @classmethod
    def decode(cls, line):
        parts = line.rstrip("\n").split("|", 3)
        if len(parts) != 4:
            raise UsageError(f"Malformed trace line: {line!r}")
        t, node, kind, details = parts
        pairs = []
        if details:
            for item in details.split(";"):
                k, _, v = item.partition("=")
                pairs.append((k, v))
        return cls(float(t), None if node == "-" else int(node), kind, tuple(pairs))


def make_event(t, node, kind, **details):
    """Build a TraceEvent; command values are stored in canonical encoding."""
    pairs = []
    for key, value in details.items():
        if hasattr(value, "encode") and hasattr(value, "cmd_id"):
            value = value.encode()
        elif isinstance(value, (set, frozenset, list, tuple)):
            value = ",".join(str(v) for v in value)
        pairs.append((key, str(value)))
    return TraceEvent(round(float(t), 3), node, kind, tuple(pairs))


class TraceLog:
    """Ordered collection of trace events with file round-tripping."""

    def __init__(self, events=None):
        self.events = list(events or [])

    def record(self, t, node, kind, **details):
        event = make_event(t, node, kind, **details)
        self.events.append(event)
        return event

    def append(self, event):
        self.events.append(event)

    def of_kind(self, *kinds):
        return [e for e in self.events if e.kind in kinds]

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def lines(self):
        return [e.encode() for e in self.events]

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for line in self.lines():
                f.write(line + "\n")
        return path

    @classmethod
    def load(cls, path):
        with open(path, "r") as f:
            return cls(TraceEvent.decode(line) for line in f if line.strip())
