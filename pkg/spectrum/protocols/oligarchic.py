#!/usr/bin/env python3
"""
Oligarchic Plugin

Ownership-partitioned ordering. Every object key has at most one owner per
epoch; an owner of all of a command's keys picks the command's position on
each key's chain and replicates it to a classic quorum in one round trip.
Anyone else either forwards to the single owner of all the keys or acquires
ownership itself, backing off exponentially when acquisitions collide.

Terminate needs every key, so the node that orders it acquires ALL, which
also seals the era's acceptors against further per-key acquisitions.

A learner that holds a decision it cannot apply yet, because an earlier
position on the same key never reached it, asks its peers for the missing
decisions until the gap closes.
"""

from __future__ import annotations

from dataclasses import dataclass

from spectrum.model import ALL_KEYS, Command, CommandKind, ProtocolKind, classic_quorum_size
from spectrum.plugin_api import Agreement

MAX_FORWARD_HOPS = 3
STAR_KEY = "*"
NO_EPOCH = -1


@dataclass(frozen=True)
class Entry:
    """A command together with its position on every key chain it touches."""

    cmd: Command
    positions: tuple

    @property
    def keys(self):
        return [k for k, _ in self.positions]

    def position(self, key):
        return dict(self.positions)[key]


class OligarchicAgreement(Agreement):
    kind = ProtocolKind.OLIGARCHIC

    def __init__(self, ctx):
        super().__init__(ctx)
        self.quorum = classic_quorum_size(ctx.n)
        self.max_epoch = 0

        # Acceptor
        self.rnd = {}
        self.rnd_all = NO_EPOCH
        self.acc = {}

        # Learner
        self.dec = {}
        self.head = {}
        self.stalled = {}
        self._catchup_timer = None

        # Owner
        self.owned = {}
        self.owns_all = False
        self.all_epoch = NO_EPOCH
        self.next_pos = {}
        self.inflight = {}
        self.assigned = set()
        self.closed = False
        self.acquiring = None
        self.attempts = 0
        self.known_owner = {}
        self._eid = 0

        # Proposer
        self.queue = {}
        self.waiting = {}
        self._retry_timer = None
        self._backoff_timer = None

    # -- proposer ---------------------------------------------------------

    def _propose(self, cmd):
        self.waiting[cmd.cmd_id] = cmd
        self._submit(cmd, hops=0)
        self._arm_retry()

    def _submit(self, cmd, hops):
        if self.terminated or cmd.cmd_id in self.learned_cmds:
            return
        if cmd.is_all:
            if self.owns_all:
                self._assign(cmd)
            elif self.ctx.is_leader():
                self._enqueue(cmd)
            elif hops < MAX_FORWARD_HOPS:
                self.ctx.send(self.ctx.omega_leader(), "forward", cmd=cmd, hops=hops + 1)
            return
        if self._owns(cmd.key_set):
            self._assign(cmd)
            return
        owner = self._single_owner(cmd.key_set)
        if owner is not None and hops < MAX_FORWARD_HOPS:
            self.ctx.send(owner, "forward", cmd=cmd, hops=hops + 1)
            return
        self._enqueue(cmd)

    def _enqueue(self, cmd):
        self.queue[cmd.cmd_id] = cmd
        if self.acquiring is None and self._backoff_timer is None:
            self._acquire_for_queue()

    def _owns(self, keys):
        if self.owns_all:
            return True
        return all(k in self.owned for k in keys)

    def _single_owner(self, keys):
        owners = {self.known_owner.get(k, (NO_EPOCH, None))[1] for k in keys}
        if len(owners) != 1:
            return None
        owner = owners.pop()
        if owner is None or owner == self.node_id or self.ctx.suspects(owner):
            return None
        return owner

    def _arm_retry(self):
        if self._retry_timer is None:
            self._retry_timer = self.ctx.set_timer(2 * self.ctx.suspicion_timeout, self._retry,
                                                   label="oligarchic-retry")

    def _retry(self):
        self._retry_timer = None
        for cid in list(self.waiting):
            if cid in self.learned_cmds:
                del self.waiting[cid]
        if self.terminated or not self.waiting:
            return
        self._request_catchup({k for cmd in self.waiting.values() if not cmd.is_all for k in cmd.key_set})
        for cmd in list(self.waiting.values()):
            if cmd.cmd_id not in self.queue:
                self._submit(cmd, hops=0)
        self._arm_retry()

    def on_leader_change(self, leader):
        for cmd in list(self.waiting.values()) + list(self.queue.values()):
            if cmd.is_all and cmd.cmd_id not in self.learned_cmds:
                self.queue.pop(cmd.cmd_id, None)
                self._submit(cmd, hops=0)

    # -- ownership acquisition -----------------------------------------------

    def _next_epoch(self):
        n = self.ctx.n
        return (self.max_epoch // n + 1) * n + self.node_id

    def _acquire_for_queue(self):
        if not self.queue or self.terminated:
            return
        if any(cmd.is_all for cmd in self.queue.values()):
            self._start_acquire(ALL_KEYS)
            return
        wanted = set()
        for cmd in self.queue.values():
            if not self._owns(cmd.key_set):
                wanted.update(cmd.key_set)
        if wanted:
            self._start_acquire(frozenset(wanted))
        else:
            self._drain_queue()

    def _start_acquire(self, keys):
        epoch = self._next_epoch()
        self.max_epoch = max(self.max_epoch, epoch)
        self.acquiring = {"epoch": epoch, "keys": keys, "promises": {}, "nacks": set()}
        self.ctx.broadcast("prepare", epoch=epoch, keys=keys, heads=dict(self.head))
        self.ctx.set_timer(2 * self.ctx.suspicion_timeout, self._acquire_timeout, epoch,
                           label="oligarchic-acquire")

    def _acquire_timeout(self, epoch):
        if self.acquiring is not None and self.acquiring["epoch"] == epoch:
            self._acquire_failed()

    def _acquire_failed(self):
        self.acquiring = None
        self.attempts += 1
        base = 2 * self.ctx.max_delay
        ceiling = min(base * 2 ** (self.attempts - 1), 16 * self.ctx.max_delay)
        delay = float(self.ctx.rng.uniform(0.5, 1.0)) * ceiling
        self.ctx.record("backoff", attempt=self.attempts, delay=round(delay, 3))
        self._backoff_timer = self.ctx.set_timer(delay, self._after_backoff,
                                                 label="oligarchic-backoff")

    def _after_backoff(self):
        self._backoff_timer = None
        pending, self.queue = self.queue, {}
        for cmd in pending.values():
            self._submit(cmd, hops=0)

    def _finish_acquire(self):
        state = self.acquiring
        epoch, keys = state["epoch"], state["keys"]
        promises = state["promises"].values()

        best = {}
        decided = {}
        for promise in promises:
            for key, pos, entry in promise["decided"]:
                decided[(key, pos)] = entry
            for key, pos, acc_epoch, entry in promise["accepted"]:
                current = best.get((key, pos))
                if current is None or acc_epoch > current[0]:
                    best[(key, pos)] = (acc_epoch, entry)

        undecided = [entry for (k, p), (_, entry) in best.items()
                     if (k, p) not in decided and (k, p) not in self.dec]
        spread = {k for entry in undecided if not entry.cmd.is_all for k in entry.keys}
        if keys is not ALL_KEYS and not spread <= keys:
            # Recovered entries reach beyond the request: start over with the union
            self._start_acquire(frozenset(keys | spread))
            return
        touched = {k for (k, _) in list(best) + list(decided)}

        self.acquiring = None
        self.attempts = 0
        if keys is ALL_KEYS:
            self.owns_all = True
            self.all_epoch = epoch
            self.owned = {}
            keys = touched | set(self.head) | set(self.next_pos) | {STAR_KEY}
            self.ctx.record("own", keys="ALL", epoch=epoch)
        else:
            self.ctx.record("own", keys=sorted(keys), epoch=epoch)
        for key in keys:
            self.owned[key] = epoch
            self.known_owner[key] = (epoch, self.node_id)

        for (key, pos), entry in decided.items():
            self._decide(entry)

        def winner(key, pos):
            if (key, pos) in self.dec:
                return self.dec[(key, pos)]
            if (key, pos) in best:
                return best[(key, pos)][1]
            return None

        highest = {}
        for key, pos in list(best) + list(self.dec):
            if key in keys:
                highest[key] = max(highest.get(key, -1), pos)

        reproposed = set()
        for key in sorted(keys, key=str):
            low = min([self.head.get(key, 0)] + [p["heads"].get(key, 0) for p in promises])
            high = max(highest.get(key, -1), self.next_pos.get(key, 0) - 1, self.head.get(key, 0) - 1)
            self.next_pos[key] = high + 1
            for pos in range(low, high + 1):
                entry = winner(key, pos)
                valid = entry is not None and all(winner(k, p) == entry for k, p in entry.positions)
                if (key, pos) in self.dec:
                    if entry not in reproposed:
                        reproposed.add(entry)
                        self.ctx.broadcast("decision", entry=entry)
                elif valid:
                    if entry not in reproposed:
                        reproposed.add(entry)
                        self.assigned.add(entry.cmd.cmd_id)
                        self._send_accept(entry)
                else:
                    self._send_accept(Entry(Command.noop((f"noop-{key}", pos)), ((key, pos),)))
        for entry in reproposed:
            if entry.cmd.kind is CommandKind.TERMINATE:
                self.closed = True
        self._drain_queue()

    def _drain_queue(self):
        pending, self.queue = self.queue, {}
        for cmd in pending.values():
            self._submit(cmd, hops=0)

    # -- ordering ------------------------------------------------------------

    def _assign(self, cmd):
        if cmd.cmd_id in self.assigned or cmd.cmd_id in self.learned_cmds:
            return
        if self.closed:
            self.ctx.record("era-closed", cmd=cmd.label)
            return
        if cmd.is_all:
            keys = sorted(set(self.next_pos) | set(self.head) | {STAR_KEY}, key=str)
        else:
            keys = sorted(cmd.key_set, key=str)
        positions = []
        for key in keys:
            pos = max(self.next_pos.get(key, 0), self.head.get(key, 0))
            self.next_pos[key] = pos + 1
            positions.append((key, pos))
        self.assigned.add(cmd.cmd_id)
        self._send_accept(Entry(cmd, tuple(positions)))
        if cmd.kind is CommandKind.TERMINATE:
            self.closed = True

    def _epoch_for(self, key):
        if self.owns_all:
            return self.owned.get(key, self.all_epoch)
        return self.owned.get(key, NO_EPOCH)

    def _send_accept(self, entry):
        self._eid += 1
        eid = (self.node_id, self._eid)
        epochs = {k: self._epoch_for(k) for k in entry.keys}
        self.inflight[eid] = {"entry": entry, "acks": set(), "rejects": set()}
        self.ctx.broadcast("accept", eid=eid, entry=entry, epochs=epochs)

    # -- message handling ------------------------------------------------------

    def on_message(self, src, msg):
        handler = getattr(self, f"_on_{msg.msg_type}", None)
        if handler is not None:
            handler(src, msg)

    def _on_forward(self, src, msg):
        self._submit(msg.cmd, msg.hops)

    def _on_prepare(self, src, msg):
        epoch, keys = msg.epoch, msg.keys
        self.max_epoch = max(self.max_epoch, epoch)
        if keys is ALL_KEYS:
            highest = max([self.rnd_all] + list(self.rnd.values()))
            granted = epoch > highest
        else:
            highest = max([self.rnd_all] + [self.rnd.get(k, NO_EPOCH) for k in keys])
            granted = self.rnd_all == NO_EPOCH and epoch > highest
        if not granted:
            self.ctx.send(src, "nack", epoch=epoch, highest=highest,
                          sealed=self.rnd_all != NO_EPOCH)
            return

        if keys is ALL_KEYS:
            self.rnd_all = epoch
            relevant = None
        else:
            for key in keys:
                self.rnd[key] = epoch
            relevant = keys
        if src != self.node_id:
            self._lose(relevant)
        for key in (keys if relevant is not None else list(self.known_owner)):
            self.known_owner[key] = (epoch, src)

        def wanted(key, pos):
            return (relevant is None or key in relevant) and pos >= msg.heads.get(key, 0)

        accepted = tuple((k, p, e, entry) for (k, p), (e, entry) in self.acc.items()
                         if wanted(k, p) and (k, p) not in self.dec)
        decided = tuple((k, p, entry) for (k, p), entry in self.dec.items() if wanted(k, p))
        heads = {k: h for k, h in self.head.items() if relevant is None or k in relevant}
        self.ctx.send(src, "promise", epoch=epoch, accepted=accepted, decided=decided, heads=heads)

    def _lose(self, keys):
        """Drop ownership of keys (None means every key) promised to someone else."""
        if keys is None:
            lost = bool(self.owned) or self.owns_all
            self.owned = {}
            self.owns_all = False
        else:
            lost = any(k in self.owned for k in keys)
            for key in keys:
                self.owned.pop(key, None)
            if lost:
                self.owns_all = False
        if lost:
            self.ctx.record("lose", keys="ALL" if keys is None else sorted(keys))

    def _on_promise(self, src, msg):
        state = self.acquiring
        if state is None or state["epoch"] != msg.epoch:
            return
        state["promises"][src] = {"accepted": msg.accepted, "decided": msg.decided,
                                  "heads": msg.heads}
        if len(state["promises"]) >= self.quorum:
            self._finish_acquire()

    def _on_nack(self, src, msg):
        self.max_epoch = max(self.max_epoch, msg.highest)
        state = self.acquiring
        if state is None or state["epoch"] != msg.epoch:
            return
        state["nacks"].add(src)
        if len(state["nacks"]) > self.ctx.n - self.quorum:
            if msg.sealed and state["keys"] is not ALL_KEYS:
                # The era is being terminated; queued commands wait for re-routing
                self.acquiring = None
                return
            self._acquire_failed()

    def _on_accept(self, src, msg):
        epochs = msg.epochs
        ok = all(e != NO_EPOCH and e >= self.rnd_all and e >= self.rnd.get(k, NO_EPOCH)
                 for k, e in epochs.items())
        if not ok:
            lost = [k for k, e in epochs.items() if e < max(self.rnd_all, self.rnd.get(k, NO_EPOCH))]
            self.ctx.send(src, "reject", eid=msg.eid, lost=lost,
                          sealed=any(e < self.rnd_all for e in epochs.values()))
            return
        for key, epoch in epochs.items():
            if key != STAR_KEY:
                self.rnd[key] = max(self.rnd.get(key, NO_EPOCH), epoch)
            if epoch >= self.known_owner.get(key, (NO_EPOCH, None))[0]:
                self.known_owner[key] = (epoch, src)
        for key, pos in msg.entry.positions:
            self.acc[(key, pos)] = (epochs[key], msg.entry)
        self.ctx.send(src, "accepted", eid=msg.eid)

    def _on_accepted(self, src, msg):
        state = self.inflight.get(msg.eid)
        if state is None:
            return
        state["acks"].add(src)
        if len(state["acks"]) >= self.quorum:
            del self.inflight[msg.eid]
            self.ctx.broadcast("decision", entry=state["entry"])

    def _on_reject(self, src, msg):
        state = self.inflight.get(msg.eid)
        if state is None:
            return
        state["rejects"].add(src)
        self._lose(None if msg.sealed else msg.lost)
        if len(state["rejects"]) > self.ctx.n - self.quorum:
            del self.inflight[msg.eid]
            cmd = state["entry"].cmd
            if cmd.kind is not CommandKind.NOOP:
                self.assigned.discard(cmd.cmd_id)
                if cmd.kind is CommandKind.TERMINATE:
                    self.closed = False
                self._submit(cmd, hops=0)

    def _on_decision(self, src, msg):
        self._decide(msg.entry)

    def _on_catchup(self, src, msg):
        entries, seen = [], set()
        for key, start in msg.heads.items():
            top = max(self.head.get(key, 0), self.stalled.get(key, -1) + 1)
            for pos in range(start, top):
                entry = self.dec.get((key, pos))
                if entry is not None and entry not in seen:
                    seen.add(entry)
                    entries.append(entry)
        if entries:
            self.ctx.send(src, "decisions", entries=tuple(entries))

    def _on_decisions(self, src, msg):
        for entry in msg.entries:
            self._decide(entry)

    # -- learning ----------------------------------------------------------------

    def _decide(self, entry):
        fresh = False
        for key, pos in entry.positions:
            if (key, pos) not in self.dec:
                self.dec[(key, pos)] = entry
                fresh = True
        if not fresh:
            return
        self._advance(entry.keys)
        for key, pos in entry.positions:
            if pos >= self.head.get(key, 0):
                self.stalled[key] = max(self.stalled.get(key, -1), pos)
        if self.stalled and self._catchup_timer is None:
            self._catchup_timer = self.ctx.set_timer(self.ctx.suspicion_timeout, self._catchup,
                                                     label="oligarchic-catchup")

    def _advance(self, keys):
        work = list(keys)
        while work:
            key = work.pop()
            entry = self.dec.get((key, self.head.get(key, 0)))
            if entry is None:
                continue
            if not all(self.head.get(k, 0) == p and self.dec.get((k, p)) == entry
                       for k, p in entry.positions):
                continue
            for k, p in entry.positions:
                self.head[k] = p + 1
                if self.stalled.get(k, -1) < p + 1:
                    self.stalled.pop(k, None)
            self.waiting.pop(entry.cmd.cmd_id, None)
            self.learn(entry.cmd, order=entry.positions)
            work.extend(entry.keys)

    def _catchup(self):
        self._catchup_timer = None
        if not self.stalled:
            return
        self._request_catchup(set(self.stalled))
        self._catchup_timer = self.ctx.set_timer(self.ctx.suspicion_timeout, self._catchup,
                                                 label="oligarchic-catchup")

    def _request_catchup(self, keys):
        if not keys:
            return
        heads = {key: self.head.get(key, 0) for key in sorted(keys, key=str)}
        self.ctx.record("catchup", keys=len(heads))
        self.ctx.broadcast("catchup", include_self=False, heads=heads)
