#!/usr/bin/env python3
"""
Monarchic Plugin

Multi-Paxos over a slot log. The omega leader orders every command: other
nodes forward to it, it assigns the next slot, gathers a classic quorum of
accepts and broadcasts the decision. Learn fires in slot order.
"""

from __future__ import annotations

from spectrum.model import Command, CommandKind, ProtocolKind, classic_quorum_size
from spectrum.plugin_api import Agreement

MAX_FORWARD_HOPS = 3


class MonarchicAgreement(Agreement):
    kind = ProtocolKind.MONARCHIC

    def __init__(self, ctx):
        super().__init__(ctx)
        self.quorum = classic_quorum_size(ctx.n)

        # Acceptor
        self.promised = 0
        self.accepted = {}
        self.max_seen = 0

        # Learner
        self.decided = {}
        self.next_learn = 0

        # Leader
        self.leading = False
        self.ballot = None
        self.next_slot = 0
        self.slot_of = {}
        self.inflight = {}
        self.queue = []
        self.closed = False
        self.preparing = None
        self.promises = {}

        # Proposer
        self.waiting = {}
        self._retry_timer = None

        if ctx.is_leader():
            if self.node_id == 0:
                # Ballot 0 belongs to node 0 and needs no prepare phase
                self.leading = True
                self.ballot = 0
            else:
                self._start_prepare()

    # -- proposer ---------------------------------------------------------

    def _propose(self, cmd):
        self.waiting[cmd.cmd_id] = cmd
        self._route(cmd, hops=0)
        self._arm_retry()

    def _route(self, cmd, hops):
        if self.leading:
            self._assign(cmd)
        elif self.ctx.is_leader():
            self.queue.append(cmd)
            if self.preparing is None:
                self._start_prepare()
        elif hops < MAX_FORWARD_HOPS:
            self.ctx.send(self.ctx.omega_leader(), "forward", cmd=cmd, hops=hops + 1)

    def _arm_retry(self):
        if self._retry_timer is None:
            self._retry_timer = self.ctx.set_timer(2 * self.ctx.suspicion_timeout, self._retry,
                                                   label="monarchic-retry")

    def _retry(self):
        self._retry_timer = None
        for cid in list(self.waiting):
            if cid in self.learned_cmds:
                del self.waiting[cid]
        if self.terminated or not self.waiting:
            return
        for cmd in self.waiting.values():
            self._route(cmd, hops=0)
        self._arm_retry()

    def on_leader_change(self, leader):
        if leader == self.node_id:
            if not self.leading and self.preparing is None:
                self._start_prepare()
            return
        if self.leading:
            self._step_down()
        queued, self.queue = self.queue, []
        for cmd in queued:
            self.ctx.send(leader, "forward", cmd=cmd, hops=1)
        for cid, cmd in self.waiting.items():
            if cid not in self.learned_cmds:
                self.ctx.send(leader, "forward", cmd=cmd, hops=1)

    # -- leader -----------------------------------------------------------

    def _next_ballot(self):
        n = self.ctx.n
        return (self.max_seen // n + 1) * n + self.node_id

    def _start_prepare(self):
        ballot = self._next_ballot()
        self.max_seen = max(self.max_seen, ballot)
        self.preparing = ballot
        self.promises = {}
        self.ctx.record("prepare", ballot=ballot)
        self.ctx.broadcast("prepare", ballot=ballot, from_slot=self.next_learn)
        self.ctx.set_timer(2 * self.ctx.suspicion_timeout, self._prepare_timeout, ballot,
                           label="monarchic-prepare")

    def _prepare_timeout(self, ballot):
        if self.preparing == ballot and self.ctx.is_leader():
            self._start_prepare()

    def _step_down(self):
        self.leading = False
        for entry in self.inflight.values():
            if entry["cmd"].kind is not CommandKind.NOOP:
                self.queue.append(entry["cmd"])
        self.inflight = {}
        self.slot_of = {}

    def _assign(self, cmd):
        if cmd.cmd_id in self.slot_of or cmd.cmd_id in self.learned_cmds:
            return
        if self.closed:
            self.ctx.record("era-closed", cmd=cmd.label)
            return
        slot = self.next_slot
        self.next_slot += 1
        self._send_accept(slot, cmd)
        if cmd.kind is CommandKind.TERMINATE:
            self.closed = True

    def _send_accept(self, slot, cmd):
        self.slot_of[cmd.cmd_id] = slot
        self.inflight[slot] = {"cmd": cmd, "acks": set()}
        self.ctx.broadcast("accept", ballot=self.ballot, slot=slot, cmd=cmd)

    def _finish_prepare(self):
        ballot = self.preparing
        self.preparing = None
        self.leading = True
        self.ballot = ballot
        self.slot_of = {}
        self.inflight = {}

        best = {}
        for promise in self.promises.values():
            for slot, cmd in promise["decided"].items():
                self._decide(slot, cmd)
            for slot, (b, cmd) in promise["accepted"].items():
                if slot not in best or b > best[slot][0]:
                    best[slot] = (b, cmd)

        known = list(self.decided) + list(best)
        low = min([p["learned_upto"] for p in self.promises.values()] + [self.next_learn])
        high = max(known + [self.next_learn - 1])
        self.next_slot = high + 1
        self.ctx.record("leader", ballot=ballot, low=low, high=high)

        for slot in range(low, high + 1):
            if slot in self.decided:
                cmd = self.decided[slot]
                self.slot_of[cmd.cmd_id] = slot
                self.ctx.broadcast("decision", slot=slot, cmd=cmd)
            elif slot in best:
                self._send_accept(slot, best[slot][1])
            else:
                self._send_accept(slot, Command.noop(("noop", slot)))
            cmd = self.decided.get(slot) or self.inflight[slot]["cmd"]
            if cmd.kind is CommandKind.TERMINATE:
                self.closed = True

        queued, self.queue = self.queue, []
        for cmd in queued:
            self._assign(cmd)

    # -- message handling --------------------------------------------------

    def on_message(self, src, msg):
        handler = getattr(self, f"_on_{msg.msg_type}", None)
        if handler is not None:
            handler(src, msg)

    def _on_forward(self, src, msg):
        self._route(msg.cmd, msg.hops)

    def _on_prepare(self, src, msg):
        self.max_seen = max(self.max_seen, msg.ballot)
        if msg.ballot <= self.promised:
            self.ctx.send(src, "nack", ballot=self.promised)
            return
        self.promised = msg.ballot
        if self.leading and src != self.node_id:
            self._step_down()
        accepted = {s: v for s, v in self.accepted.items()
                    if s >= msg.from_slot and s not in self.decided}
        decided = {s: c for s, c in self.decided.items() if s >= msg.from_slot}
        self.ctx.send(src, "promise", ballot=msg.ballot, accepted=accepted, decided=decided,
                      learned_upto=self.next_learn)

    def _on_promise(self, src, msg):
        if self.preparing == msg.ballot:
            self.promises[src] = {"accepted": msg.accepted, "decided": msg.decided,
                                  "learned_upto": msg.learned_upto}
            if len(self.promises) >= self.quorum:
                self._finish_prepare()
        elif self.leading and msg.ballot == self.ballot:
            # Late promise: catch the acceptor up on decisions it missed
            for slot in range(msg.learned_upto, self.next_learn):
                self.ctx.send(src, "decision", slot=slot, cmd=self.decided[slot])

    def _on_nack(self, src, msg):
        self.max_seen = max(self.max_seen, msg.ballot)
        mine = self.preparing if self.preparing is not None else self.ballot
        if mine is None or msg.ballot <= mine:
            return
        if self.leading:
            self._step_down()
        self.preparing = None
        if self.ctx.is_leader():
            backoff = self.ctx.max_delay * (1 + float(self.ctx.rng.random()))
            self.ctx.set_timer(backoff, self._retry_prepare, label="monarchic-backoff")

    def _retry_prepare(self):
        if not self.leading and self.preparing is None and self.ctx.is_leader():
            self._start_prepare()

    def _on_accept(self, src, msg):
        self.max_seen = max(self.max_seen, msg.ballot)
        if msg.ballot < self.promised:
            self.ctx.send(src, "nack", ballot=self.promised)
            return
        self.promised = msg.ballot
        if self.leading and msg.ballot != self.ballot:
            self._step_down()
        self.accepted[msg.slot] = (msg.ballot, msg.cmd)
        self.ctx.send(src, "accepted", ballot=msg.ballot, slot=msg.slot)

    def _on_accepted(self, src, msg):
        if not self.leading or msg.ballot != self.ballot:
            return
        entry = self.inflight.get(msg.slot)
        if entry is None:
            return
        entry["acks"].add(src)
        if len(entry["acks"]) >= self.quorum:
            del self.inflight[msg.slot]
            self.ctx.broadcast("decision", slot=msg.slot, cmd=entry["cmd"])

    def _on_decision(self, src, msg):
        self._decide(msg.slot, msg.cmd)

    def _decide(self, slot, cmd):
        if slot in self.decided:
            return
        self.decided[slot] = cmd
        while self.next_learn in self.decided:
            learned = self.decided[self.next_learn]
            self.waiting.pop(learned.cmd_id, None)
            self.learn(learned, order=self.next_learn)
            self.next_learn += 1
