#!/usr/bin/env python3
"""
Democratic Plugin

Leaderless ordering with dependency sets. Any node leads its own
instances: it pre-accepts a command with its local dependency estimate and
commits on the fast path when a fast quorum agrees unchanged, otherwise
runs one accept round on a classic quorum with the union of dependencies.
Execution linearizes the committed dependency graph, strongly connected
components in dependency order and members by cmd_id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from tarjan import tarjan

from spectrum.model import (Command, CommandKind, ProtocolKind, classic_quorum_size,
                            fast_quorum_size)
from spectrum.plugin_api import Agreement, Execution

PREACCEPTED = "preaccepted"
ACCEPTED = "accepted"
COMMITTED = "committed"

STAR_KEY = "*"
NO_BALLOT = (-1, -1)


@dataclass
class Record:
    """Local view of one instance."""

    cmd: Command | None = None
    deps: frozenset = frozenset()
    status: str | None = None
    ballot: tuple = NO_BALLOT
    accepted_ballot: tuple = NO_BALLOT
    initial: bool = False
    changed: bool = False
    noticed_at: float | None = None


@dataclass
class Attempt:
    """Leader-side bookkeeping for one phase of one instance."""

    phase: str
    ballot: tuple
    cmd: Command | None = None
    deps: frozenset = frozenset()
    replies: dict = field(default_factory=dict)
    nacks: set = field(default_factory=set)
    recovering: bool = False


class DemocraticAgreement(Agreement):
    kind = ProtocolKind.DEMOCRATIC

    def __init__(self, ctx):
        super().__init__(ctx)
        self.quorum = classic_quorum_size(ctx.n)
        self.fast_quorum = fast_quorum_size(ctx.n)
        self.records = {}
        self.attempts = {}
        self.last_by_key = {}
        self.led = {}
        self.waiting = {}
        self.max_round = 0
        self.seq = 0
        self.executor = None
        self._scan_timer = None

    def bind_executor(self, executor):
        self.executor = executor

    # -- dependency estimate ---------------------------------------------------

    def _index(self, iid, cmd):
        if cmd is None or cmd.kind is CommandKind.NOOP:
            return
        leader, seq = iid
        keys = [STAR_KEY] if cmd.is_all else list(cmd.key_set)
        for key in keys:
            chain = self.last_by_key.setdefault(key, {})
            if chain.get(leader, (leader, -1))[1] < seq:
                chain[leader] = iid

    def local_deps(self, cmd, exclude=None):
        """Latest instance per (key, leader) among instances conflicting with cmd."""
        if cmd.kind is CommandKind.NOOP:
            return frozenset()
        if cmd.is_all:
            chains = self.last_by_key.values()
        else:
            chains = [self.last_by_key.get(k, {}) for k in cmd.key_set]
            chains.append(self.last_by_key.get(STAR_KEY, {}))
        deps = {iid for chain in chains for iid in chain.values()}
        deps.discard(exclude)
        return frozenset(deps)

    def _record(self, iid):
        record = self.records.get(iid)
        if record is None:
            record = self.records[iid] = Record(noticed_at=self.ctx.now)
        return record

    # -- proposer ---------------------------------------------------------------

    def _propose(self, cmd):
        if cmd.is_all and not self.ctx.is_leader():
            self.waiting[cmd.cmd_id] = cmd
            self.ctx.send(self.ctx.omega_leader(), "forward", cmd=cmd)
            return
        self._lead(cmd)

    def on_leader_change(self, leader):
        for cid, cmd in list(self.waiting.items()):
            if cid in self.learned_cmds or self.terminated:
                del self.waiting[cid]
            elif leader == self.node_id:
                del self.waiting[cid]
                self._lead(cmd)
            else:
                self.ctx.send(leader, "forward", cmd=cmd)
        self._arm_scan()

    def _lead(self, cmd):
        if cmd.cmd_id in self.led or self.terminated:
            return
        iid = (self.node_id, self.seq)
        self.seq += 1
        self.led[cmd.cmd_id] = iid
        ballot = (0, self.node_id)
        deps = self.local_deps(cmd)
        record = self._record(iid)
        record.cmd, record.deps, record.status = cmd, deps, PREACCEPTED
        record.ballot, record.initial = ballot, True
        self._index(iid, cmd)
        self.attempts[iid] = Attempt("preaccept", ballot, cmd, deps)
        self.ctx.broadcast("preaccept", include_self=False, iid=iid, cmd=cmd, deps=deps,
                           ballot=ballot)
        self.ctx.set_timer(3 * self.ctx.max_delay, self._preaccept_timeout, iid, ballot,
                           label="democratic-slow")
        self._arm_scan()

    def _preaccept_timeout(self, iid, ballot):
        attempt = self.attempts.get(iid)
        if attempt is None or attempt.phase != "preaccept" or attempt.ballot != ballot:
            return
        if len(attempt.replies) >= self.quorum - 1:
            self._slow_path(iid, attempt)
        else:
            self.ctx.set_timer(2 * self.ctx.max_delay, self._preaccept_timeout, iid, ballot,
                               label="democratic-slow")

    def _slow_path(self, iid, attempt):
        deps = set(attempt.deps)
        for reply in attempt.replies.values():
            deps.update(reply["deps"])
        self._start_accept(iid, attempt.cmd, frozenset(deps), attempt.ballot, attempt.recovering)

    def _start_accept(self, iid, cmd, deps, ballot, recovering=False):
        attempt = Attempt("accept", ballot, cmd, deps, recovering=recovering)
        self.attempts[iid] = attempt
        record = self._record(iid)
        record.cmd, record.deps, record.status = cmd, deps, ACCEPTED
        record.ballot = record.accepted_ballot = ballot
        self._index(iid, cmd)
        self.ctx.broadcast("accept", include_self=False, iid=iid, cmd=cmd, deps=deps,
                           ballot=ballot)
        if self.quorum - 1 <= 0:
            self._commit(iid, cmd, deps, "recovery" if recovering else "slow")

    def _commit(self, iid, cmd, deps, path):
        self.attempts.pop(iid, None)
        self.ctx.record("commit", iid=f"{iid[0]}.{iid[1]}", path=path, cmd=cmd.label)
        self.ctx.broadcast("commit", include_self=False, iid=iid, cmd=cmd, deps=deps)
        self._apply_commit(iid, cmd, deps)

    def _apply_commit(self, iid, cmd, deps):
        record = self._record(iid)
        if record.status == COMMITTED:
            return
        original = record.cmd if iid[0] == self.node_id else None
        record.cmd, record.deps, record.status = cmd, deps, COMMITTED
        self._index(iid, cmd)
        self.waiting.pop(cmd.cmd_id, None)
        self.learn(cmd, order=(iid, deps), identity=iid)
        if original is not None and original.cmd_id != cmd.cmd_id:
            # Our instance was recovered as a no-op: lead the command again
            self.led.pop(original.cmd_id, None)
            self._lead(original)

    # -- message handling --------------------------------------------------------

    def on_message(self, src, msg):
        handler = getattr(self, f"_on_{msg.msg_type}", None)
        if handler is not None:
            handler(src, msg)

    def _on_forward(self, src, msg):
        if self.ctx.is_leader():
            self._lead(msg.cmd)
        elif msg.cmd.cmd_id not in self.led:
            self.waiting[msg.cmd.cmd_id] = msg.cmd
            self.ctx.send(self.ctx.omega_leader(), "forward", cmd=msg.cmd)

    def _on_preaccept(self, src, msg):
        iid = msg.iid
        record = self._record(iid)
        self.max_round = max(self.max_round, msg.ballot[0])
        if record.status == COMMITTED:
            self.ctx.send(src, "committed", iid=iid, cmd=record.cmd, deps=record.deps)
            return
        if msg.ballot < record.ballot:
            self.ctx.send(src, "nack", iid=iid, ballot=record.ballot)
            return
        deps = msg.deps | self.local_deps(msg.cmd, exclude=iid)
        record.cmd, record.deps, record.status = msg.cmd, deps, PREACCEPTED
        record.ballot = msg.ballot
        record.initial = msg.ballot == (0, iid[0])
        record.changed = deps != msg.deps
        self._index(iid, msg.cmd)
        self.ctx.send(src, "preaccept_ok", iid=iid, ballot=msg.ballot, deps=deps,
                      changed=record.changed)
        self._arm_scan()

    def _on_preaccept_ok(self, src, msg):
        attempt = self.attempts.get(msg.iid)
        if attempt is None or attempt.phase != "preaccept" or attempt.ballot != msg.ballot:
            return
        attempt.replies[src] = {"deps": msg.deps, "changed": msg.changed}
        unchanged = sum(1 for r in attempt.replies.values() if not r["changed"])
        changed = len(attempt.replies) - unchanged
        fast_allowed = attempt.ballot == (0, self.node_id) and not attempt.recovering
        if fast_allowed and unchanged >= self.fast_quorum - 1:
            self._commit(msg.iid, attempt.cmd, attempt.deps, "fast")
            return
        fast_possible = fast_allowed and (self.ctx.n - 1 - changed) >= self.fast_quorum - 1
        if not fast_possible and len(attempt.replies) >= self.quorum - 1:
            self._slow_path(msg.iid, attempt)

    def _on_accept(self, src, msg):
        iid = msg.iid
        record = self._record(iid)
        self.max_round = max(self.max_round, msg.ballot[0])
        if record.status == COMMITTED:
            self.ctx.send(src, "committed", iid=iid, cmd=record.cmd, deps=record.deps)
            return
        if msg.ballot < record.ballot:
            self.ctx.send(src, "nack", iid=iid, ballot=record.ballot)
            return
        record.cmd, record.deps, record.status = msg.cmd, msg.deps, ACCEPTED
        record.ballot = record.accepted_ballot = msg.ballot
        self._index(iid, msg.cmd)
        self.ctx.send(src, "accept_ok", iid=iid, ballot=msg.ballot)

    def _on_accept_ok(self, src, msg):
        attempt = self.attempts.get(msg.iid)
        if attempt is None or attempt.phase != "accept" or attempt.ballot != msg.ballot:
            return
        attempt.replies[src] = True
        if len(attempt.replies) >= self.quorum - 1:
            self._commit(msg.iid, attempt.cmd, attempt.deps,
                         "recovery" if attempt.recovering else "slow")

    def _on_commit(self, src, msg):
        self._apply_commit(msg.iid, msg.cmd, msg.deps)

    def _on_committed(self, src, msg):
        self.attempts.pop(msg.iid, None)
        self._apply_commit(msg.iid, msg.cmd, msg.deps)

    def _on_nack(self, src, msg):
        self.max_round = max(self.max_round, msg.ballot[0])
        attempt = self.attempts.get(msg.iid)
        if attempt is None or msg.ballot <= attempt.ballot:
            return
        attempt.nacks.add(src)
        if len(attempt.nacks) > self.ctx.n - self.quorum:
            del self.attempts[msg.iid]
            delay = self.ctx.max_delay * (1 + 2 * float(self.ctx.rng.random()))
            self.ctx.set_timer(delay, self._maybe_recover, msg.iid, label="democratic-backoff")

    # -- recovery ------------------------------------------------------------------

    def _arm_scan(self):
        closed = self.executor is not None and self.executor.closed
        if self._scan_timer is None and not closed:
            self._scan_timer = self.ctx.set_timer(self.ctx.suspicion_timeout, self._scan,
                                                  label="democratic-scan")

    def _stuck(self):
        stuck = set()
        for iid, record in self.records.items():
            if record.status != COMMITTED:
                stuck.add(iid)
        if self.executor is not None:
            stuck.update(i for i in self.executor.missing if self._record(i).status != COMMITTED)
        return stuck

    def _scan(self):
        self._scan_timer = None
        stuck = self._stuck()
        for iid in sorted(stuck):
            self._maybe_recover(iid)
        if stuck:
            self._arm_scan()

    def _maybe_recover(self, iid):
        record = self._record(iid)
        if record.status == COMMITTED or iid in self.attempts:
            return
        leader = iid[0]
        waited = self.ctx.now - (record.noticed_at or 0.0)
        stagger = self.ctx.suspicion_timeout * (1 + (self.node_id - leader) % self.ctx.n)
        if leader == self.node_id or (self.ctx.suspects(leader) and waited >= stagger) \
                or waited >= 4 * stagger:
            self._start_recovery(iid)

    def _start_recovery(self, iid):
        record = self._record(iid)
        self.max_round = max(self.max_round, record.ballot[0])
        ballot = (self.max_round + 1, self.node_id)
        self.max_round += 1
        self.attempts[iid] = Attempt("prepare", ballot, recovering=True)
        self.ctx.record("recover", iid=f"{iid[0]}.{iid[1]}", ballot=f"{ballot[0]}.{ballot[1]}")
        self.ctx.broadcast("prepare", iid=iid, ballot=ballot)

    def _on_prepare(self, src, msg):
        iid = msg.iid
        record = self._record(iid)
        self.max_round = max(self.max_round, msg.ballot[0])
        if msg.ballot <= record.ballot:
            self.ctx.send(src, "nack", iid=iid, ballot=record.ballot)
            return
        record.ballot = msg.ballot
        self.ctx.send(src, "prepare_ok", iid=iid, ballot=msg.ballot, status=record.status,
                      cmd=record.cmd, deps=record.deps, accepted_ballot=record.accepted_ballot,
                      initial=record.initial, changed=record.changed)

    def _on_prepare_ok(self, src, msg):
        attempt = self.attempts.get(msg.iid)
        if attempt is None or attempt.phase != "prepare" or attempt.ballot != msg.ballot:
            return
        attempt.replies[src] = msg
        if len(attempt.replies) >= self.quorum:
            self._decide_recovery(msg.iid, attempt)

    def _decide_recovery(self, iid, attempt):
        replies = list(attempt.replies.values())
        leader = iid[0]

        committed = [r for r in replies if r.status == COMMITTED]
        if committed:
            self._commit(iid, committed[0].cmd, committed[0].deps, "recovery")
            return

        accepted = [r for r in replies if r.status == ACCEPTED]
        if accepted:
            best = max(accepted, key=lambda r: r.accepted_ballot)
            self._start_accept(iid, best.cmd, best.deps, attempt.ballot, recovering=True)
            return

        preaccepted = [(src, r) for src, r in attempt.replies.items() if r.status == PREACCEPTED]
        untouched = [r for src, r in preaccepted if src != leader and r.initial and not r.changed]
        if untouched:
            groups = {}
            for r in untouched:
                groups.setdefault(r.deps, []).append(r)
            deps, members = max(groups.items(), key=lambda item: len(item[1]))
            if len(members) >= self.ctx.n // 2:
                self._start_accept(iid, members[0].cmd, deps, attempt.ballot, recovering=True)
                return

        if preaccepted:
            cmd = preaccepted[0][1].cmd
            deps = frozenset().union(*(r.deps for _, r in preaccepted))
            self._start_accept(iid, cmd, deps, attempt.ballot, recovering=True)
            return

        noop = Command.noop((f"noop-n{iid[0]}", iid[1]))
        self._start_accept(iid, noop, frozenset(), attempt.ballot, recovering=True)


class DependencyGraphExecutor(Execution):
    """
    Linearizes committed instances: strongly connected components run once
    every dependency outside them has run, members ordered by cmd_id.
    """

    def __init__(self, era=None):
        super().__init__(era)
        self.graph = {}
        self.commands = {}
        self.executed = set()
        self.pending = set()
        self.missing = set()
        self._ready = []
        self._dirty = False

    def identity(self, cmd, order):
        return order[0]

    def _append(self, cmd, order):
        iid, deps = order
        self.graph[iid] = frozenset(deps)
        self.commands[iid] = cmd
        self.pending.add(iid)
        self.missing.discard(iid)
        self._dirty = True

    def _next(self):
        if not self._ready and self._dirty:
            self._dirty = False
            self._execute_ready()
        return self._ready.pop(0) if self._ready else None

    def _drain(self):
        drained = self._ready + [self.commands[i] for i in sorted(self.pending)]
        self._ready = []
        self.pending = set()
        return drained

    def _components(self):
        """Strongly connected components of the pending graph, dependencies first."""
        graph = {}
        for iid in sorted(self.pending):
            deps = []
            for dep in sorted(self.graph[iid]):
                if dep in self.executed:
                    continue
                if dep not in self.graph:
                    self.missing.add(dep)
                    continue
                deps.append(dep)
            graph[iid] = deps
        return tarjan(graph)

    def _execute_ready(self):
        for component in self._components():
            members = set(component)
            blocked = any(dep not in self.executed and dep not in members
                          for iid in component for dep in self.graph[iid])
            if blocked:
                continue
            for iid in sorted(component, key=lambda i: (self.commands[i].cmd_id, i)):
                self.executed.add(iid)
                self.pending.discard(iid)
                self._ready.append(self.commands[iid])
