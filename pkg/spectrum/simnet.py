#!/usr/bin/env python3
"""
Simulated Network

Deterministic discrete-event message passing with virtual time (ms),
per-link latency plus seeded jitter, crash-stop faults and a timeout-based
eventual leader election service (lowest unsuspected index).
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field

import numpy as np

from core.logger import get_logger, log_crash
from spectrum.errors import FaultScriptError, UsageError
from spectrum.model import classic_quorum_size
from spectrum.trace import END, TraceLog, make_event

# One-way delays (ms) between Virginia, Ohio, Ireland, Frankfurt and Mumbai
WAN_DELAYS = (
    (0, 12, 38, 45, 95),
    (12, 0, 43, 50, 110),
    (38, 43, 0, 12, 60),
    (45, 50, 12, 0, 55),
    (95, 110, 60, 55, 0),
)
WAN_SITES = ("virginia", "ohio", "ireland", "frankfurt", "mumbai")


@dataclass
class LatencyMatrix:
    """
    Base one-way delay per ordered pair of nodes, plus deterministic jitter.

    Jitter is a hash of (seed, envelope uid) mapped to [0, jitter_fraction]
    of the base delay, so runs stay replayable.
    """

    delay: object
    jitter_seed: int = 0
    jitter_fraction: float = 0.1

    def __post_init__(self):
        matrix = np.asarray(self.delay, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise UsageError(f"Latency matrix must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise UsageError("Latency matrix entries must be finite")
        off_diagonal = matrix[~np.eye(matrix.shape[0], dtype=bool)]
        if off_diagonal.size and np.any(off_diagonal <= 0):
            raise UsageError("Link delays must be strictly positive")
        if np.any(np.diag(matrix) < 0):
            raise UsageError("Local delays cannot be negative")
        if not 0 <= self.jitter_fraction <= 1:
            raise UsageError("Jitter fraction must lie in [0, 1]")
        self.delay = matrix
        self._rows = matrix.tolist()

    @property
    def n(self):
        return len(self._rows)

    @property
    def max_delay(self):
        return float(self.delay.max())

    def base(self, src, dst):
        return self._rows[src][dst]

    def rtt(self, i, j):
        return self._rows[i][j] + self._rows[j][i]

    def jitter(self, uid):
        """Fraction of the base delay added to envelope `uid`."""
        if self.jitter_fraction == 0:
            return 0.0
        digest = hashlib.blake2b(f"{self.jitter_seed}:{uid}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2 ** 64 * self.jitter_fraction

    def sample(self, src, dst, uid):
        base = self._rows[src][dst]
        return base * (1.0 + self.jitter(uid))

    @classmethod
    def wan(cls, n=5, seed=0, jitter_fraction=0.1):
        """WAN-shaped matrix; more than five nodes reuse the five sites."""
        delay = [[WAN_DELAYS[i % 5][j % 5] if i % 5 != j % 5 else (0 if i == j else 5)
                  for j in range(n)] for i in range(n)]
        return cls(delay, seed, jitter_fraction)

    @classmethod
    def uniform(cls, n, delay_ms, seed=0, jitter_fraction=0.1):
        delay = [[0 if i == j else delay_ms for j in range(n)] for i in range(n)]
        return cls(delay, seed, jitter_fraction)


@dataclass
class MessageEnvelope:
    src: int
    dst: int
    deliver_at: float
    payload: object
    uid: int
    sent_at: float = 0.0


@dataclass
class Timer:
    """Handle returned by set_timer(); cancelled timers are skipped."""

    node: int | None
    fire_at: float
    callback: object
    args: tuple = ()
    label: str = "timer"
    cancelled: bool = False

    def cancel(self):
        self.cancelled = True


@dataclass
class FaultScript:
    """
    Scripted faults: (virtual time ms, action, node) entries where action is
    'crash' or 'recover_fd_suspect' (a transient false suspicion).
    """

    entries: list = field(default_factory=list)

    ACTIONS = ("crash", "recover_fd_suspect")

    def add(self, at, action, node):
        if action not in self.ACTIONS:
            raise FaultScriptError(f"Unknown fault action: {action}")
        self.entries.append((float(at), action, int(node)))
        return self

    def crashes(self):
        return [(t, node) for t, action, node in self.entries if action == "crash"]

    def validate(self, n, safety_suite=True):
        """
        Check node indices, double crashes and the crash budget.

        Raises:
            FaultScriptError: If the script cannot be applied
        """
        seen = set()
        for t, action, node in self.entries:
            if not 0 <= node < n:
                raise FaultScriptError(f"Fault targets unknown node {node}")
            if t < 0:
                raise FaultScriptError(f"Fault scheduled at negative time {t}")
            if action == "crash":
                if node in seen:
                    raise FaultScriptError(f"Node {node} is crashed twice")
                seen.add(node)
        budget = classic_quorum_size(n) - 1
        if safety_suite and len(seen) > budget:
            raise FaultScriptError(
                f"{len(seen)} crashes exceed the fault budget of {budget} for {n} nodes")

    def install(self, sim):
        for t, action, node in sorted(self.entries):
            if action == "crash":
                sim.crash(node, at=t)
            else:
                sim.false_suspicion(node, at=t)


class Simulation:
    """
    Single-threaded event loop owning every node's state.

    Handlers attached with attach() receive on_message(src, payload) and
    on_leader_change(leader); timers call back into the node directly.
    """

    def __init__(self, latency, suspicion_timeout=None, fifo=False, trace=None,
                 trace_messages=False):
        self.latency = latency
        self.n = latency.n
        self.now = 0.0
        self.fifo = fifo
        self.suspicion_timeout = float(suspicion_timeout or 4 * latency.max_delay)
        self.trace = trace if trace is not None else TraceLog()
        self.trace_messages = trace_messages
        self.nodes = {}
        self.crashed = set()
        self.crash_times = {}
        self._queue = []
        self._next_uid = 0
        self._sent = set()
        self._delivered = set()
        self._last_link = {}
        self._suspected = {i: set() for i in range(self.n)}
        self._leaders = {i: 0 for i in range(self.n)}
        self.dispatched = 0
        self.logger = get_logger()

    # -- wiring ---------------------------------------------------------

    def attach(self, node_id, handler):
        if not 0 <= node_id < self.n:
            raise UsageError(f"Node id {node_id} outside [0, {self.n})")
        self.nodes[node_id] = handler

    def record(self, node, kind, **details):
        return self.trace.record(self.now, node, kind, **details)

    def _take_uid(self):
        uid = self._next_uid
        self._next_uid += 1
        return uid

    def _push(self, at, item):
        uid = self._take_uid()
        heapq.heappush(self._queue, (at, uid, item))
        return uid

    # -- messaging ------------------------------------------------------

    def send(self, src, dst, payload):
        """
        Schedule payload for delivery to dst.

        Sends from a crashed node are ignored. Delivery is dropped if either
        endpoint is crashed when it falls due.
        """
        if src in self.crashed:
            return None
        uid = self._take_uid()
        deliver_at = self.now + self.latency.sample(src, dst, uid)
        if self.fifo:
            deliver_at = max(deliver_at, self._last_link.get((src, dst), 0.0))
            self._last_link[(src, dst)] = deliver_at
        envelope = MessageEnvelope(src, dst, deliver_at, payload, uid, self.now)
        heapq.heappush(self._queue, (deliver_at, uid, envelope))
        self._sent.add(uid)
        return envelope

    def broadcast(self, src, payload, include_self=True):
        for dst in range(self.n):
            if dst != src or include_self:
                self.send(src, dst, payload)

    # -- timers and scripted actions -------------------------------------

    def set_timer(self, node, delay, callback, *args, label="timer"):
        timer = Timer(node, self.now + max(0.0, float(delay)), callback, args, label)
        self._push(timer.fire_at, timer)
        return timer

    def schedule(self, at, callback, *args, label="action"):
        """Schedule a harness-level action (no owning node)."""
        timer = Timer(None, max(float(at), self.now), callback, args, label)
        self._push(timer.fire_at, timer)
        return timer

    # -- faults -----------------------------------------------------------

    def crash(self, node, at=None):
        if at is None or at <= self.now:
            self.crash_now(node)
        else:
            self.schedule(at, self.crash_now, node, label="crash")

    def crash_now(self, node):
        """
        Crash-stop `node`: its handler is never invoked again and every
        correct observer suspects it after the suspicion timeout.

        Raises:
            FaultScriptError: If the node is already crashed
        """
        if node in self.crashed:
            raise FaultScriptError(f"Node {node} is already crashed")
        self.crashed.add(node)
        self.crash_times[node] = self.now
        self.record(node, "crash")
        log_crash(self.now, node)
        for observer in range(self.n):
            if observer == node:
                continue
            at = self.now + self.suspicion_timeout + self.latency.base(node, observer)
            self.schedule(at, self._suspect, observer, node, label="suspect")

    def false_suspicion(self, node, at):
        """Make every observer suspect a correct node for one timeout."""
        self.schedule(at, self._false_suspicion_now, node, label="false-suspect")

    def _false_suspicion_now(self, node):
        if node in self.crashed:
            return
        for observer in range(self.n):
            if observer != node:
                self._suspect(observer, node)
                self.schedule(self.now + self.suspicion_timeout, self._trust, observer, node,
                              label="trust")

    def _suspect(self, observer, node):
        if observer in self.crashed or node in self._suspected[observer]:
            return
        self._suspected[observer].add(node)
        self.record(observer, "suspect", target=node)
        self._refresh_leader(observer)

    def _trust(self, observer, node):
        if observer in self.crashed or node in self.crashed:
            return
        self._suspected[observer].discard(node)
        self.record(observer, "trust", target=node)
        self._refresh_leader(observer)

    def _refresh_leader(self, observer):
        leader = self.omega_leader(observer)
        if leader != self._leaders[observer]:
            self._leaders[observer] = leader
            self.record(observer, "leader", leader=leader)
            handler = self.nodes.get(observer)
            if handler is not None and observer not in self.crashed:
                handler.on_leader_change(leader)

    def omega_leader(self, observer):
        """Lowest-indexed node that `observer` does not suspect."""
        suspected = self._suspected[observer]
        for candidate in range(self.n):
            if candidate not in suspected:
                return candidate
        return observer

    def suspects(self, observer, node):
        return node in self._suspected[observer]

    def is_correct(self, node):
        return node not in self.crashed

    def correct_nodes(self):
        return [i for i in range(self.n) if i not in self.crashed]

    # -- event loop -------------------------------------------------------

    def pending(self):
        return len(self._queue)

    def peek_time(self):
        return self._queue[0][0] if self._queue else None

    def step(self):
        """
        Dispatch the earliest event (ties broken by uid).

        Returns:
            TraceEvent describing the dispatch, or END if the queue is empty
        """
        if not self._queue:
            return END
        at, uid, item = heapq.heappop(self._queue)
        if at < self.now:
            raise UsageError(f"Virtual clock would move backwards ({at} < {self.now})")
        return self._dispatch(at, item)

    def pending_messages(self):
        """In-flight envelopes ordered by due time, for schedule exploration."""
        return [item for _, _, item in sorted(self._queue, key=lambda e: (e[0], e[1]))
                if isinstance(item, MessageEnvelope)]

    def deliver_now(self, uid):
        """
        Dispatch the queued envelope `uid` ahead of its turn; the clock never
        moves backwards, so an early delivery happens at the current time.

        Raises:
            UsageError: If no queued envelope has that uid
        """
        for index, (at, queued_uid, item) in enumerate(self._queue):
            if queued_uid == uid and isinstance(item, MessageEnvelope):
                self._queue.pop(index)
                heapq.heapify(self._queue)
                return self._dispatch(max(at, self.now), item)
        raise UsageError(f"No queued envelope with uid {uid}")

    def _dispatch(self, at, item):
        self.now = at
        self.dispatched += 1

        if isinstance(item, MessageEnvelope):
            return self._deliver(item)

        if item.cancelled:
            return make_event(self.now, item.node, "timer-cancelled", label=item.label)
        if item.node is not None and item.node in self.crashed:
            return make_event(self.now, item.node, "timer-skipped", label=item.label)
        item.callback(*item.args)
        return make_event(self.now, item.node, item.label)

    def _deliver(self, envelope):
        if envelope.uid in self._delivered or envelope.uid not in self._sent:
            raise UsageError(f"Envelope {envelope.uid} delivered twice or never sent")
        if envelope.dst in self.crashed or envelope.src in self.crashed:
            event = make_event(self.now, envelope.dst, "drop", src=envelope.src,
                               msg=type(envelope.payload).__name__, uid=envelope.uid)
            if self.trace_messages:
                self.trace.append(event)
            return event
        self._delivered.add(envelope.uid)
        event = make_event(self.now, envelope.dst, "deliver", src=envelope.src,
                           msg=type(envelope.payload).__name__, uid=envelope.uid)
        if self.trace_messages:
            self.trace.append(event)
        handler = self.nodes.get(envelope.dst)
        if handler is not None:
            handler.on_message(envelope.src, envelope.payload)
        return event

    def run(self, until=None, max_events=None, stop=None):
        """
        Step until the queue drains, virtual time passes `until`, `max_events`
        events were dispatched or `stop(sim)` returns True.

        Returns:
            int: Number of events dispatched
        """
        count = 0
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                self.now = max(self.now, float(until))
                break
            if max_events is not None and count >= max_events:
                break
            if stop is not None and stop(self):
                break
            if self.step() is END:
                break
            count += 1
        return count
