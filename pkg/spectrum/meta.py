#!/usr/bin/env python3
"""
Meta-Consensus

Decides one Switch command per era, creates the protocol instance that runs
the era, closes the previous era with Terminate and pumps delivery across
eras in order. One MetaConsensus object lives at every replica.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

from core.logger import get_logger, log_switch
from spectrum.errors import EraClosed, ProtocolError
from spectrum.model import Command, CommandKind, classic_quorum_size

BOOTSTRAP_EPOCH = 0


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class EraAccept:
    cmd: Command
    era: int
    epoch: int


@dataclass(frozen=True)
class AckAccept:
    era: int
    epoch: int
    ok: bool


@dataclass(frozen=True)
class Decide:
    cmd: Command
    era: int
    epoch: int


@dataclass(frozen=True)
class Prepare:
    era: int
    epoch: int


@dataclass(frozen=True)
class AckPrepare:
    era: int
    epoch: int
    ok: bool
    vdec: Command | None = None
    rdec: int = -1
    decided: Command | None = None


@dataclass(frozen=True)
class EraProposeRequest:
    cmd: Command


META_MESSAGES = (EraAccept, AckAccept, Decide, Prepare, AckPrepare, EraProposeRequest)


# -- in-flight phases ------------------------------------------------------------

@dataclass
class AcceptPhase:
    """One broadcast of EraAccept; result is None until a quorum replied."""

    cmd: Command
    era: int
    epoch: int
    acks: dict = field(default_factory=dict)
    result: bool | None = None
    on_done: object = None

    @property
    def done(self):
        return self.result is not None


@dataclass
class PreparePhase:
    """One recovery attempt for an era; result is None until it settles."""

    cmd: Command
    era: int
    epoch: int
    replies: dict = field(default_factory=dict)
    result: bool | None = None
    accept: AcceptPhase | None = None

    @property
    def done(self):
        return self.result is not None


class MetaConsensus:
    """
    Era-switch agreement, recovery and the universal propose/delivery pump.

    Args:
        replica (Replica): Owning node, used for messaging and contexts
        registry (ProtocolRegistry): Plugin factories
        managed (bool): False when an external coordinator installs eras
            (stop-and-restart); then Terminate does not install the next era
    """

    def __init__(self, replica, registry, managed=True):
        self.replica = replica
        self.sim = replica.sim
        self.node_id = replica.node_id
        self.n = self.sim.n
        self.quorum = classic_quorum_size(self.n)
        self.registry = registry
        self.managed = managed
        self.logger = get_logger()

        # Era-switch state
        self.rnd = {}
        self.vdec = {}
        self.rdec = {}
        self.decided = {}
        self.decided_epoch = {}
        self.last_decided = 0
        self.epoch = BOOTSTRAP_EPOCH

        # Management state
        self.protocols = {}
        self.active_agreement = None
        self.active_executor = None
        self.exec_id = 0

        # Delivery bookkeeping
        self.delivered = []
        self.delivered_ids = set()
        self.outstanding = {}
        self.parked = {}
        self.stalled_at = None
        self.on_drained = None

        # Switch proposals
        self.accept_phases = {}
        self.prepare_phases = {}
        self.used_bootstrap = set()
        self.switch_queue = []
        self.current_switch = None
        self.before_decide = None
        self._switch_seq = 0
        self._heartbeat = None
        self._recovery_attempts = 0

    # -- helpers ------------------------------------------------------------------

    def _send(self, dst, msg):
        self.sim.send(self.node_id, dst, msg)

    def _broadcast(self, msg):
        self.sim.broadcast(self.node_id, msg)

    def _record(self, kind, **details):
        self.sim.record(self.node_id, kind, **details)

    def _next_epoch(self):
        epoch = (self.epoch // self.n + 1) * self.n + self.node_id
        self.epoch = epoch
        return epoch

    def is_leader(self):
        return self.sim.omega_leader(self.node_id) == self.node_id

    def current_kind(self):
        instance = self.protocols.get(self.last_decided)
        return instance.kind if instance is not None else None

    def make_switch(self, target):
        self._switch_seq += 1
        return Command.switch(target, self.node_id, self._switch_seq)

    # -- message dispatch -------------------------------------------------------------

    def on_message(self, src, msg):
        if isinstance(msg, EraAccept):
            self.on_era_accept(msg.cmd, msg.era, msg.epoch, src)
        elif isinstance(msg, AckAccept):
            self._on_ack_accept(src, msg)
        elif isinstance(msg, Decide):
            self.on_decide(msg.cmd, msg.era, msg.epoch)
        elif isinstance(msg, Prepare):
            self.on_prepare(msg.era, msg.epoch, src)
        elif isinstance(msg, AckPrepare):
            self._on_ack_prepare(src, msg)
        elif isinstance(msg, EraProposeRequest):
            self.era_propose(msg.cmd)
        else:
            raise ProtocolError(f"Unknown meta message {msg!r}")

    # -- era switch: core protocol ---------------------------------------------------------

    def era_propose(self, cmd):
        """
        Propose a Switch command for the next undecided era.

        Non-leaders forward the request to the omega leader. Node 0 may use
        the bootstrap epoch once per era; every other proposal goes through
        recovery, which picks a fresh epoch first.

        Returns:
            AcceptPhase | PreparePhase | None: Handle whose result settles later,
                or None if the request was forwarded or queued
        """
        if not self.is_leader():
            self._send(self.sim.omega_leader(self.node_id), EraProposeRequest(cmd))
            self._record("switch-forward", target=cmd.switch_target.value)
            return None
        if self.current_switch is not None and not self.current_switch.done:
            self.switch_queue.append(cmd)
            return None
        era = self.last_decided + 1
        self._record("era-propose", era=era, target=cmd.switch_target.value)
        if self.node_id == 0 and era not in self.used_bootstrap and self.epoch == BOOTSTRAP_EPOCH:
            self.used_bootstrap.add(era)
            phase = self.era_accept_phase(cmd, era, BOOTSTRAP_EPOCH)
            phase.on_done = partial(self._after_propose, cmd)
        else:
            phase = self.era_recovery(cmd)
        self.current_switch = phase
        return phase

    def _after_propose(self, cmd, ok):
        if not ok:
            self.current_switch = None
            self._schedule_recovery(cmd)
        else:
            self._next_queued_switch()

    def _next_queued_switch(self):
        self.current_switch = None
        if self.switch_queue:
            self.era_propose(self.switch_queue.pop(0))

    def era_accept_phase(self, cmd, era, epoch):
        """Broadcast EraAccept and collect a classic quorum of replies."""
        phase = AcceptPhase(cmd, era, epoch)
        self.accept_phases[(era, epoch)] = phase
        self._broadcast(EraAccept(cmd, era, epoch))
        return phase

    def on_era_accept(self, cmd, era, epoch, src):
        self.epoch = max(self.epoch, epoch)
        if self.rnd.get(era, BOOTSTRAP_EPOCH) <= epoch:
            self.vdec[era] = cmd
            self.rdec[era] = epoch
            self.rnd[era] = epoch
            self._send(src, AckAccept(era, epoch, True))
            return True
        self._send(src, AckAccept(era, epoch, False))
        return False

    def _on_ack_accept(self, src, msg):
        phase = self.accept_phases.get((msg.era, msg.epoch))
        if phase is None or phase.done:
            return
        phase.acks[src] = msg.ok
        if len(phase.acks) < self.quorum:
            return
        if not all(phase.acks.values()):
            self._settle(phase, False)
            return
        if self.before_decide is not None and self.before_decide(self, phase):
            return
        self._broadcast(Decide(phase.cmd, phase.era, phase.epoch))
        self._settle(phase, True)

    def _settle(self, phase, ok):
        phase.result = ok
        self._record("era-accept-result", era=phase.era, epoch=phase.epoch, ok=ok)
        if phase.on_done is not None:
            phase.on_done(ok)

    def on_decide(self, cmd, era, epoch=None):
        if self.decided.get(era) is None:
            self.decided[era] = cmd
            self.decided_epoch[era] = epoch
            self._record("era-decided", era=era, target=cmd.switch_target.value, cmd=cmd)
        while self.decided.get(self.last_decided + 1) is not None:
            era_next = self.last_decided + 1
            self.change_era(era_next, self.decided[era_next])
            self.last_decided = era_next
        self._arm_heartbeat()

    def change_era(self, era, cmd):
        """
        Close the active era with Terminate and start the era's new instance.

        Raises:
            ConfigurationError: If the target protocol is not registered
        """
        if self.active_agreement is not None:
            terminate = Command.terminate(era - 1, successor=cmd)
            try:
                self.active_agreement.propose(terminate)
            except EraClosed:
                pass
        self.install_era(era, cmd.switch_target)

    def install_era(self, era, kind):
        ctx = self.replica.context(era, kind)
        instance = self.registry.init_protocol(era, kind, self.node_id, ctx)
        self.protocols[era] = instance
        self.active_agreement = instance.agreement
        if self.active_executor is None:
            self.active_executor = instance.executor
            self.exec_id = era
        self._record("change-era", era=era, target=kind.value)
        log_switch(self.sim.now, self.node_id, era, kind.value)
        self.replica.flush(era)
        parked, self.parked = self.parked, {}
        for cmd in parked.values():
            self.universal_propose(cmd)

    # -- era switch: recovery ----------------------------------------------------------------

    def era_recovery(self, cmd):
        era = self.last_decided + 1
        epoch = self._next_epoch()
        phase = PreparePhase(cmd, era, epoch)
        self.prepare_phases[(era, epoch)] = phase
        self._record("era-recovery", era=era, epoch=epoch)
        self._broadcast(Prepare(era, epoch))
        self.sim.set_timer(self.node_id, 2 * self.sim.suspicion_timeout, self._recovery_timeout,
                           phase, label="meta-recovery")
        return phase

    def _recovery_timeout(self, phase):
        if not phase.done and (phase.accept is None or not phase.accept.done):
            phase.result = False
            self._after_recovery(phase, False)
        self.replica.pump()

    def on_prepare(self, era, epoch, src):
        self.epoch = max(self.epoch, epoch)
        if self.rnd.get(era, BOOTSTRAP_EPOCH) < epoch:
            self.rnd[era] = epoch
            self._send(src, AckPrepare(era, epoch, True, self.vdec.get(era),
                                       self.rdec.get(era, -1), self.decided.get(era)))
            return True
        self._send(src, AckPrepare(era, epoch, False))
        return False

    def _on_ack_prepare(self, src, msg):
        phase = self.prepare_phases.get((msg.era, msg.epoch))
        if phase is None or phase.done or phase.accept is not None:
            return
        if not msg.ok:
            phase.result = False
            self._after_recovery(phase, False)
            return
        if msg.decided is not None:
            self.on_decide(msg.decided, msg.era, None)
        phase.replies[src] = msg
        if len(phase.replies) < self.quorum:
            return
        if self.decided.get(phase.era) is not None:
            phase.result = True
            self._after_recovery(phase, True)
            return
        forced = [r for r in phase.replies.values() if r.vdec is not None]
        to_force = max(forced, key=lambda r: r.rdec).vdec if forced else None
        value = to_force if to_force is not None else phase.cmd
        if value is None:
            # Recovery after a leader change found nothing accepted for the era
            phase.result = True
            self._after_recovery(phase, True)
            return
        if to_force is not None:
            self._record("era-force", era=phase.era, target=to_force.switch_target.value)
        accept = self.era_accept_phase(value, phase.era, phase.epoch)
        phase.accept = accept
        accept.on_done = partial(self._after_forced, phase)

    def _after_forced(self, phase, ok):
        phase.result = ok
        self._after_recovery(phase, ok)

    def _after_recovery(self, phase, ok):
        if phase is self.current_switch:
            self.current_switch = None
        if not ok:
            self._schedule_recovery(phase.cmd)
            return
        self._recovery_attempts = 0
        decided = self.decided.get(phase.era)
        if phase.cmd is not None and decided is not None and decided.cmd_id != phase.cmd.cmd_id \
                and phase.cmd.switch_target is not self._target_after(phase.era):
            # Our own command lost the era to a forced value: try the next era
            self.switch_queue.insert(0, phase.cmd)
        self._next_queued_switch()

    def _target_after(self, era):
        cmd = self.decided.get(era)
        return cmd.switch_target if cmd is not None else None

    def _schedule_recovery(self, cmd):
        self._recovery_attempts += 1
        delay = self.sim.latency.max_delay * min(2 ** self._recovery_attempts, 16)
        delay *= 0.5 + (self.node_id + 1) / (2 * self.n)
        self.sim.set_timer(self.node_id, delay, self._retry_recovery, cmd, label="meta-retry")

    def _retry_recovery(self, cmd):
        pending = self.vdec.get(self.last_decided + 1)
        own_pending = cmd is not None and cmd.cmd_id not in {c.cmd_id for c in self.decided.values()}
        busy = self.current_switch is not None and not self.current_switch.done
        if busy or (pending is None and not own_pending):
            return
        if self.is_leader():
            self.current_switch = self.era_recovery(cmd if own_pending else pending)
        elif own_pending:
            self.era_propose(cmd)
        self.replica.pump()

    def on_leader_change(self, leader):
        """A new leader runs recovery on the next era so that an accepted switch is completed."""
        if leader != self.node_id:
            return
        busy = self.current_switch is not None and not self.current_switch.done
        if busy:
            return
        if self.switch_queue:
            self._next_queued_switch()
        else:
            self.current_switch = self.era_recovery(self.vdec.get(self.last_decided + 1))

    def _arm_heartbeat(self):
        if self._heartbeat is None:
            self._heartbeat = self.sim.set_timer(self.node_id, self.sim.suspicion_timeout,
                                                 self._rebroadcast_decisions, label="meta-heartbeat")

    def _rebroadcast_decisions(self):
        self._heartbeat = None
        if self.is_leader():
            for era in sorted(self.decided):
                self._broadcast(Decide(self.decided[era], era, self.decided_epoch.get(era)))
        self._arm_heartbeat()

    # -- management: universal propose, learn and delivery ---------------------------------------

    def universal_propose(self, cmd):
        """Hand a client command to the newest era, parking it if none is open."""
        if cmd.cmd_id in self.delivered_ids:
            self.replica.notify_decided(cmd)
            return
        self.outstanding[cmd.cmd_id] = cmd
        if self.active_agreement is None:
            self.parked[cmd.cmd_id] = cmd
            return
        try:
            self.active_agreement.propose(cmd)
        except EraClosed as e:
            self._record("era-closed", era=e.era, cmd=cmd.label)
            self.parked[cmd.cmd_id] = cmd

    def on_learn(self, era, cmd, order=None):
        instance = self.protocols.get(era)
        if instance is None:
            raise ProtocolError(f"Learn for unknown era {era} at node {self.node_id}")
        details = {"slot": order} if isinstance(order, int) else {}
        self._record("learn", era=era, cmd=cmd.label, **details)
        instance.executor.append_for_execution(cmd, order)
        if cmd.kind is CommandKind.TERMINATE and self.managed:
            successor = cmd.successor
            if successor is not None:
                self.on_decide(successor, era + 1, None)

    def delivery_pump(self):
        """Drain deliverable commands from the active executor, crossing eras in order."""
        while self.active_executor is not None:
            cmd = self.active_executor.get_next_deliverable()
            if cmd is None:
                return
            if cmd.kind is CommandKind.TERMINATE:
                self._record("terminate-deliver", era=self.exec_id)
                self._cross_era()
                continue
            if cmd.cmd_id in self.delivered_ids:
                continue
            self.delivered_ids.add(cmd.cmd_id)
            self.delivered.append((self.exec_id, cmd))
            self.outstanding.pop(cmd.cmd_id, None)
            self._record("decide", era=self.exec_id, idx=len(self.delivered) - 1, cmd=cmd)
            self.replica.notify_decided(cmd)

    def _cross_era(self):
        following = self.protocols.get(self.exec_id + 1)
        if following is None:
            if self.managed:
                raise ProtocolError(
                    f"Era {self.exec_id + 1} not installed when era {self.exec_id} terminated")
            self.stalled_at = self.exec_id
            self.active_executor = None
            if self.on_drained is not None:
                self.on_drained(self.exec_id)
            return
        self.exec_id += 1
        self.active_executor = following.executor
        for cmd in list(self.outstanding.values()):
            if cmd.kind is CommandKind.CLIENT:
                self.universal_propose(cmd)

    def resume(self):
        """Re-propose outstanding commands once an externally installed era runs."""
        self.stalled_at = None
        for cmd in list(self.outstanding.values()):
            if cmd.kind is CommandKind.CLIENT:
                self.universal_propose(cmd)
