#!/usr/bin/env python3
"""
Workload Generator

Closed-loop clients draw their commands from deterministic per-client
streams. In each phase a conflict_pct share of a client's commands also
touches a hot key shared by every client; the rest only touch the client's
private key.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from spectrum.errors import ConfigurationError
from spectrum.model import Command


@dataclass
class WorkloadSpec:
    """
    Args:
        clients_per_node (int): Closed-loop workers per node
        phases (list): (start_ms, conflict_pct) pairs, time ordered
        hot_keys (int): Shared keys per phase a conflicting command picks from
        payload_size (int): Opaque payload bytes per command
    """

    clients_per_node: int = 50
    phases: list = field(default_factory=lambda: [(0.0, 0.0)])
    hot_keys: int = 1
    payload_size: int = 8

    def __post_init__(self):
        if self.clients_per_node < 0:
            raise ConfigurationError("clients_per_node must not be negative")
        if self.hot_keys < 1:
            raise ConfigurationError("hot_keys must be at least 1")
        self.phases = [(float(start), float(pct)) for start, pct in self.phases]
        if not self.phases or self.phases[0][0] > 0:
            self.phases.insert(0, (0.0, 0.0))
        starts = [start for start, _ in self.phases]
        if starts != sorted(starts):
            raise ConfigurationError(f"Workload phases are not time ordered: {starts}")
        for _, pct in self.phases:
            if not 0 <= pct <= 100:
                raise ConfigurationError(f"Conflict percentage {pct} outside [0, 100]")
        self._starts = starts

    def phase_at(self, t):
        """Index of the phase in force at virtual time t."""
        return max(0, bisect_right(self._starts, t) - 1)

    def conflict_pct_at(self, t):
        return float(self.phases[self.phase_at(t)][1])

    def phase_changes(self):
        return [(start, pct) for start, pct in self.phases[1:]]


def private_key(client_id):
    return f"k-{client_id}"


def hot_key(phase, index):
    return f"hot-{phase}-{index}"


class ClientStream:
    """Deterministic command stream of one client."""

    def __init__(self, spec, seed, node, index):
        self.spec = spec
        self.node = node
        self.client_id = f"c{node}-{index}"
        self.rng = np.random.default_rng([int(seed), int(node), int(index)])
        self.seq = 0

    def next_command(self, t):
        """Draw the next command as issued at virtual time t."""
        self.seq += 1
        phase = self.spec.phase_at(t)
        pct = self.spec.conflict_pct_at(t)
        roll = float(self.rng.random()) * 100.0
        pick = int(self.rng.integers(self.spec.hot_keys))
        payload = self.rng.bytes(self.spec.payload_size)
        keys = {private_key(self.client_id)}
        if roll < pct:
            keys.add(hot_key(phase, pick))
        return Command.client(self.client_id, self.seq, keys, payload)


class Workload:
    """All client streams of a run."""

    def __init__(self, spec, seed, n):
        self.spec = spec
        self.seed = seed
        self.n = n
        self.streams = {}
        for node in range(n):
            for index in range(spec.clients_per_node):
                stream = ClientStream(spec, seed, node, index)
                self.streams[stream.client_id] = stream

    def conflict_pct_at(self, t):
        return self.spec.conflict_pct_at(t)

    def streams_of(self, node):
        return [s for s in self.streams.values() if s.node == node]

    def schedule(self, times):
        """
        Open-loop preview: every client issues one command at each time.

        Returns:
            list: (t, command) pairs ordered by time then client
        """
        out = []
        for t in times:
            for client_id in sorted(self.streams):
                out.append((t, self.streams[client_id].next_command(t)))
        return out


def generate_workload(spec, seed, n):
    """Build the deterministic workload of a run."""
    return Workload(spec, seed, n)
