#!/usr/bin/env python3
"""
Plugin API

The contract every consensus plugin honours: an Agreement half that orders
commands and pushes Learn callbacks, an Execution half that hands commands
out in an order respecting conflicts, and the registry that pairs them per
era and node.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from core.logger import get_logger
from spectrum.errors import ConfigurationError, EraClosed, ProtocolError
from spectrum.model import CommandKind, ProtocolKind


@dataclass(frozen=True)
class ProtocolMessage:
    """Plugin message riding a simnet envelope; the body is read-only."""

    era: int
    kind: ProtocolKind
    msg_type: str
    body: dict = field(default_factory=dict)

    def __getattr__(self, name):
        body = self.__dict__.get("body") or {}
        try:
            return body[name]
        except KeyError:
            raise AttributeError(name) from None


class ProtocolContext:
    """
    Everything a plugin instance may touch: messaging scoped to its era,
    timers, the leader oracle, tracing and the Learn callback.

    Args:
        sim (Simulation): Shared simulator
        node_id (int): Owning node
        era (int): Era this instance serves
        kind (ProtocolKind): Protocol family
        on_learn (callable): on_learn(era, cmd, order) into Meta-Consensus
        after_event (callable): Run after each timer callback (delivery pump)
        seed (int): Run seed, mixed with era and node for the private RNG
    """

    def __init__(self, sim, node_id, era, kind, on_learn=None, after_event=None, seed=0):
        self.sim = sim
        self.node_id = node_id
        self.era = era
        self.kind = kind
        self._on_learn = on_learn
        self._after_event = after_event
        self.rng = np.random.default_rng([int(seed), int(era), int(node_id)])

    @property
    def n(self):
        return self.sim.n

    @property
    def now(self):
        return self.sim.now

    @property
    def max_delay(self):
        return self.sim.latency.max_delay

    @property
    def suspicion_timeout(self):
        return self.sim.suspicion_timeout

    def message(self, msg_type, **body):
        return ProtocolMessage(self.era, self.kind, msg_type, body)

    def send(self, dst, msg_type, **body):
        self.sim.send(self.node_id, dst, self.message(msg_type, **body))

    def broadcast(self, msg_type, include_self=True, **body):
        self.sim.broadcast(self.node_id, self.message(msg_type, **body), include_self)

    def set_timer(self, delay, callback, *args, label=None):
        label = label or f"{self.kind.value.lower()}-timer"
        return self.sim.set_timer(self.node_id, delay, self._fire, callback, args, label=label)

    def _fire(self, callback, args):
        callback(*args)
        if self._after_event is not None:
            self._after_event()

    def omega_leader(self):
        return self.sim.omega_leader(self.node_id)

    def is_leader(self):
        return self.omega_leader() == self.node_id

    def suspects(self, node):
        return self.sim.suspects(self.node_id, node)

    def record(self, kind, **details):
        return self.sim.record(self.node_id, kind, era=self.era, **details)

    def learn(self, cmd, order=None):
        if self._on_learn is not None:
            self._on_learn(self.era, cmd, order)


class Agreement(ABC):
    """
    Ordering half of a plugin.

    Subclasses implement _propose() and on_message(); they call learn() when
    a command's position is final. Proposals are deduplicated by cmd_id and
    refused with EraClosed once Terminate has been learned locally.
    """

    kind = None

    def __init__(self, ctx):
        self.ctx = ctx
        self.logger = get_logger()
        self.proposed = set()
        self.learned = set()
        self.learned_cmds = set()
        self.terminated = False

    @property
    def era(self):
        return self.ctx.era

    @property
    def node_id(self):
        return self.ctx.node_id

    def propose(self, cmd):
        """
        Submit a command to this era.

        Returns:
            bool: False if the command was already proposed here

        Raises:
            EraClosed: If Terminate was already learned at this node
        """
        if self.terminated:
            raise EraClosed(self.era, cmd)
        if cmd.cmd_id in self.proposed:
            return False
        self.proposed.add(cmd.cmd_id)
        self._propose(cmd)
        return True

    @abstractmethod
    def _propose(self, cmd):
        """Protocol-specific proposal path."""

    @abstractmethod
    def on_message(self, src, msg):
        """Handle a ProtocolMessage for this era."""

    def on_leader_change(self, leader):
        """Called when the local omega output changes."""

    def bind_executor(self, executor):
        """Plugins that need to see execution progress keep a reference."""

    def learn(self, cmd, order=None, identity=None):
        """
        Push a learned command to Meta-Consensus exactly once per identity.

        Args:
            cmd (Command): Learned command
            order: Protocol-specific ordering information for the executor
            identity: Dedup key, defaults to cmd_id

        Returns:
            bool: True if this was the first learn of that identity
        """
        identity = cmd.cmd_id if identity is None else identity
        if identity in self.learned:
            return False
        self.learned.add(identity)
        self.learned_cmds.add(cmd.cmd_id)
        if cmd.kind is CommandKind.TERMINATE:
            self.terminated = True
        self.ctx.learn(cmd, order)
        return True

    def pending(self):
        """Commands proposed here that have not been learned yet."""
        return [cid for cid in self.proposed if cid not in self.learned_cmds]


class Execution(ABC):
    """
    Execution half of a plugin: a pool of learned commands handed out in an
    order that respects conflicts.

    After Terminate is returned the executor is closed: every command still
    pooled, or appended later, is discarded.
    """

    def __init__(self, era=None):
        self.era = era
        self.appended = set()
        self.returned = set()
        self.closed = False
        self.discarded = []

    def identity(self, cmd, order):
        return cmd.cmd_id

    def append_for_execution(self, cmd, order=None):
        identity = self.identity(cmd, order)
        if identity in self.appended:
            return False
        self.appended.add(identity)
        if self.closed:
            self.discarded.append(cmd)
            return False
        self._append(cmd, order)
        return True

    def get_next_deliverable(self):
        """
        Returns:
            Command: Next command whose conflicting predecessors were all
                returned, or None if nothing is ready
        """
        while not self.closed:
            cmd = self._next()
            if cmd is None:
                return None
            if cmd.kind is CommandKind.NOOP or cmd.cmd_id in self.returned:
                continue
            self.returned.add(cmd.cmd_id)
            if cmd.kind is CommandKind.TERMINATE:
                self.closed = True
                self.discarded.extend(self._drain())
            return cmd
        return None

    @abstractmethod
    def _append(self, cmd, order):
        """Add a command to the pool."""

    @abstractmethod
    def _next(self):
        """Pop the next ready command or return None."""

    @abstractmethod
    def _drain(self):
        """Remove and return everything still pooled."""


class LearnOrderExecutor(Execution):
    """Executor for plugins that already learn in a conflict-respecting order."""

    def __init__(self, era=None):
        super().__init__(era)
        self._queue = deque()

    def _append(self, cmd, order):
        self._queue.append(cmd)

    def _next(self):
        return self._queue.popleft() if self._queue else None

    def _drain(self):
        drained = list(self._queue)
        self._queue.clear()
        return drained

    def __len__(self):
        return len(self._queue)


@dataclass
class ProtocolInstance:
    era: int
    kind: ProtocolKind
    agreement: Agreement
    executor: Execution


class ProtocolRegistry:
    """Factories per protocol family; remembers which (era, node) pairs exist."""

    def __init__(self):
        self._factories = {}
        self._initialized = set()

    def register(self, kind, agreement_cls, executor_cls):
        self._factories[kind] = (agreement_cls, executor_cls)

    def kinds(self):
        return list(self._factories)

    def fresh(self):
        """Same factories, no (era, node) pair initialized yet."""
        registry = ProtocolRegistry()
        registry._factories = dict(self._factories)
        return registry

    def init_protocol(self, era, kind, node, ctx):
        """
        Create a fresh (agreement, executor) pair for one era at one node.

        Raises:
            ConfigurationError: If no plugin is registered for kind
            ProtocolError: If (era, node) was already initialized
        """
        if not isinstance(kind, ProtocolKind) or kind not in self._factories:
            raise ConfigurationError(f"No protocol registered for {kind}")
        if (era, node) in self._initialized:
            raise ProtocolError(f"Era {era} already initialized at node {node}")
        self._initialized.add((era, node))
        agreement_cls, executor_cls = self._factories[kind]
        agreement, executor = agreement_cls(ctx), executor_cls(era)
        agreement.bind_executor(executor)
        return ProtocolInstance(era, kind, agreement, executor)

    @classmethod
    def default(cls):
        from spectrum.protocols import register_defaults
        registry = cls()
        register_defaults(registry)
        return registry
