#!/usr/bin/env python3
"""
Clients and History

Closed-loop clients with retransmission, and the HistoryLog that records
every submission, retransmission, timeout and decision of a run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from core.logger import get_logger
from spectrum.errors import UsageError

MIN_RETRANSMIT_MS = 1_000.0

HISTORY_FIELDS = ["cmd_id", "node", "keys", "first_submit", "submits", "timeouts",
                  "rejects", "decided_at", "latency", "era", "decides", "outcome"]

DECIDED = "decided"
PENDING = "pending"
UNDECIDED_AT_HORIZON = "undecided-at-horizon"


@dataclass
class RetransmitPolicy:
    """
    Retransmission timeout per protocol family, floor one virtual second.

    `fixed` overrides every family. While no era is installed the client
    waits for the slowest family.
    """

    by_family: dict = field(default_factory=dict)
    fixed: float | None = None

    def timeout_for(self, kind=None):
        if self.fixed is not None:
            return max(float(self.fixed), MIN_RETRANSMIT_MS)
        if kind is None or kind not in self.by_family:
            return max([MIN_RETRANSMIT_MS] + list(self.by_family.values()))
        return max(float(self.by_family[kind]), MIN_RETRANSMIT_MS)

    def describe(self):
        if self.fixed is not None:
            return f"{self.timeout_for():.0f}ms"
        return ", ".join(f"{kind.value} {self.timeout_for(kind):.0f}ms"
                         for kind in sorted(self.by_family, key=lambda k: k.value))


@dataclass
class CommandRecord:
    cmd_id: str
    node: int
    keys: str
    submits: list = field(default_factory=list)
    timeouts: list = field(default_factory=list)
    rejects: list = field(default_factory=list)
    decided_at: float | None = None
    latency: float | None = None
    era: int | None = None
    decides: dict = field(default_factory=dict)
    at_horizon: bool = False

    @property
    def first_submit(self):
        return self.submits[0] if self.submits else None

    @property
    def decided(self):
        return self.decided_at is not None

    @property
    def outcome(self):
        if self.decided:
            return DECIDED
        return UNDECIDED_AT_HORIZON if self.at_horizon else PENDING


class HistoryLog:
    """Per-command records keyed by the command label."""

    def __init__(self):
        self.records = {}

    def _record(self, cmd, node=None):
        rec = self.records.get(cmd.label)
        if rec is None:
            rec = CommandRecord(cmd.label, node, cmd.keys_text())
            self.records[cmd.label] = rec
        return rec

    def submitted(self, cmd, t, node):
        self._record(cmd, node).submits.append(t)

    def timed_out(self, cmd, t):
        self._record(cmd).timeouts.append(t)

    def rejected(self, cmd, t):
        self._record(cmd).rejects.append(t)

    def decided(self, cmd, t):
        rec = self._record(cmd)
        if rec.decided_at is None:
            rec.decided_at = t
            rec.latency = t - rec.first_submit
        return rec.latency

    def absorb_trace(self, trace):
        """Fill per-node decide times and the era of decision from 'decide' events."""
        for event in trace.of_kind("decide"):
            label = event["cmd"].split("|", 1)[0]
            rec = self.records.get(label)
            if rec is None:
                continue
            rec.decides.setdefault(event.node, event.t)
            if rec.era is None:
                rec.era = int(event["era"])

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records.values())

    def decided_count(self):
        return sum(1 for r in self.records.values() if r.decided)

    def timeout_count(self):
        return sum(len(r.timeouts) for r in self.records.values())

    def undecided(self):
        return [r for r in self.records.values() if not r.decided]

    def mark_horizon(self):
        """Flag every command still undecided when the run is cut off."""
        for r in self.records.values():
            r.at_horizon = not r.decided

    def at_horizon(self):
        return [r for r in self.records.values() if r.outcome == UNDECIDED_AT_HORIZON]

    def latency_series(self, node=None):
        """(decided_at, latency) pairs, optionally for one originating node, by time."""
        rows = [(r.decided_at, r.latency) for r in self.records.values()
                if r.decided and (node is None or r.node == node)]
        return sorted(rows)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(HISTORY_FIELDS)
            for r in self.records.values():
                writer.writerow([
                    r.cmd_id, r.node, r.keys, r.first_submit,
                    " ".join(f"{t:.3f}" for t in r.submits),
                    " ".join(f"{t:.3f}" for t in r.timeouts),
                    " ".join(f"{t:.3f}" for t in r.rejects),
                    "" if r.decided_at is None else f"{r.decided_at:.3f}",
                    "" if r.latency is None else f"{r.latency:.3f}",
                    "" if r.era is None else r.era,
                    " ".join(f"{n}:{t:.3f}" for n, t in sorted(r.decides.items())),
                    r.outcome,
                ])
        return path

    @classmethod
    def load_csv(cls, path):
        """
        Raises:
            UsageError: If the file lacks the history header
        """
        history = cls()
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != HISTORY_FIELDS:
                raise UsageError(f"{path} is not a history file")
            for row in reader:
                rec = CommandRecord(row["cmd_id"], int(row["node"]), row["keys"])
                rec.submits = [float(t) for t in row["submits"].split()]
                rec.timeouts = [float(t) for t in row["timeouts"].split()]
                rec.rejects = [float(t) for t in row["rejects"].split()]
                rec.decided_at = float(row["decided_at"]) if row["decided_at"] else None
                rec.latency = float(row["latency"]) if row["latency"] else None
                rec.era = int(row["era"]) if row["era"] else None
                rec.at_horizon = row["outcome"] == UNDECIDED_AT_HORIZON
                for item in row["decides"].split():
                    node, _, t = item.partition(":")
                    rec.decides[int(node)] = float(t)
                history.records[rec.cmd_id] = rec
        return history


class Client:
    """
    Closed-loop worker attached to one replica: one outstanding command,
    resent with the same cmd_id after every retransmission timeout.

    Args:
        replica (Replica): Node the client talks to
        stream (ClientStream): Source of commands
        history (HistoryLog): Shared run history
        metrics (MetricsWindow): Live window feeding the oracle, or None
        retransmit_timeout (RetransmitPolicy | float): Per-family policy, or
            one timeout in virtual ms for every family
    """

    def __init__(self, replica, stream, history, metrics=None, retransmit_timeout=MIN_RETRANSMIT_MS):
        self.replica = replica
        self.sim = replica.sim
        self.stream = stream
        self.client_id = stream.client_id
        self.history = history
        self.metrics = metrics
        if not isinstance(retransmit_timeout, RetransmitPolicy):
            retransmit_timeout = RetransmitPolicy(fixed=float(retransmit_timeout))
        self.policy = retransmit_timeout
        self.logger = get_logger()
        self.outstanding = None
        self.attempt = 0
        self.stopped_at = None
        self._timer = None
        replica.attach_client(self)

    @property
    def node(self):
        return self.replica.node_id

    @property
    def retransmit_timeout(self):
        """Timeout of the family currently installed at the client's replica."""
        return self.policy.timeout_for(self.replica.meta.current_kind())

    def start(self, at=0.0):
        self.sim.schedule(at, self._submit_next, label="client")

    def stop(self, at):
        """No new commands after virtual time `at`."""
        self.stopped_at = at

    def _submit_next(self):
        if self.stopped_at is not None and self.sim.now >= self.stopped_at:
            self.outstanding = None
            return
        cmd = self.stream.next_command(self.sim.now)
        self.outstanding = cmd
        self.attempt = 0
        self.history.submitted(cmd, self.sim.now, self.node)
        if self.metrics is not None:
            self.metrics.record_submission(self.sim.now, self.node, cmd)
        self._send()

    def _send(self):
        cmd = self.outstanding
        if not self.replica.submit(cmd, self.attempt) and not self.replica.crashed:
            self.history.rejected(cmd, self.sim.now)
        self._timer = self.sim.schedule(self.sim.now + self.retransmit_timeout, self._on_timeout,
                                        cmd.cmd_id, label="client-timeout")

    def _on_timeout(self, cmd_id):
        if self.outstanding is None or self.outstanding.cmd_id != cmd_id:
            return
        self.history.timed_out(self.outstanding, self.sim.now)
        self.attempt += 1
        self.history.submitted(self.outstanding, self.sim.now, self.node)
        self._send()

    def on_decided(self, cmd, t):
        if self.outstanding is None or cmd.cmd_id != self.outstanding.cmd_id:
            return
        latency = self.history.decided(cmd, t)
        if self.metrics is not None:
            self.metrics.record_latency(t, self.node, latency)
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        self.outstanding = None
        self.sim.schedule(t, self._submit_next, label="client")
