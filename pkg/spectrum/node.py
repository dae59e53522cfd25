#!/usr/bin/env python3
"""
Replica

One simulated node: routes simnet deliveries to Meta-Consensus or to the
protocol instance of the message's era, buffers messages for eras not yet
installed and runs the delivery pump after every handler.
"""

from __future__ import annotations

from collections import defaultdict

from core.logger import get_logger
from spectrum.meta import META_MESSAGES, MetaConsensus
from spectrum.plugin_api import ProtocolContext, ProtocolMessage


class Replica:
    """
    Args:
        node_id (int): Index of this node
        sim (Simulation): Shared simulator
        registry (ProtocolRegistry): Plugin factories
        seed (int): Run seed, forwarded to protocol contexts
        managed (bool): False for stop-and-restart runs
    """

    def __init__(self, node_id, sim, registry, seed=0, managed=True):
        self.node_id = node_id
        self.sim = sim
        self.seed = seed
        self.logger = get_logger()
        self.meta = MetaConsensus(self, registry, managed=managed)
        self.buffer = defaultdict(list)
        self.clients = {}
        self.gate_open = True
        sim.attach(node_id, self)

    @property
    def crashed(self):
        return self.node_id in self.sim.crashed

    def context(self, era, kind):
        return ProtocolContext(self.sim, self.node_id, era, kind, on_learn=self.meta.on_learn,
                               after_event=self.pump, seed=self.seed)

    # -- simnet callbacks ------------------------------------------------------

    def on_message(self, src, payload):
        if isinstance(payload, ProtocolMessage):
            instance = self.meta.protocols.get(payload.era)
            if instance is None:
                self.buffer[payload.era].append((src, payload))
            else:
                instance.agreement.on_message(src, payload)
        elif isinstance(payload, META_MESSAGES):
            self.meta.on_message(src, payload)
        else:
            self.logger.debug(f"node {self.node_id} ignored {type(payload).__name__} from {src}")
        self.pump()

    def on_leader_change(self, leader):
        self.meta.on_leader_change(leader)
        for instance in list(self.meta.protocols.values()):
            instance.agreement.on_leader_change(leader)
        self.pump()

    def flush(self, era):
        instance = self.meta.protocols[era]
        for src, payload in self.buffer.pop(era, []):
            instance.agreement.on_message(src, payload)

    def pump(self):
        if not self.crashed:
            self.meta.delivery_pump()

    # -- clients ---------------------------------------------------------------

    def attach_client(self, client):
        self.clients[client.client_id] = client

    def submit(self, cmd, attempt=0):
        """
        Accept a client command at this node.

        Returns:
            bool: False if the node is crashed or rejects commands (transition
                gap of the stop-and-restart baseline)
        """
        if self.crashed:
            return False
        if not self.gate_open:
            self.sim.record(self.node_id, "reject", cmd=cmd)
            return False
        self.sim.record(self.node_id, "submit", cmd=cmd, attempt=attempt)
        self.meta.universal_propose(cmd)
        self.pump()
        return True

    def notify_decided(self, cmd):
        client = self.clients.get(cmd.cmd_id[0])
        if client is not None:
            client.on_decided(cmd, self.sim.now)

    def request_switch(self, target):
        """Ask Meta-Consensus for a switch to `target` from this node."""
        if self.crashed:
            return None
        phase = self.meta.era_propose(self.meta.make_switch(target))
        self.pump()
        return phase
