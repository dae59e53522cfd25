#!/usr/bin/env python3
"""
Core Model

Domain vocabulary shared by every module: commands and their conflict
relation, command structures (C-structs), quorum arithmetic, protocol kinds.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass, field

from spectrum.errors import ConfigurationError, UsageError

# Keys travel inside trace lines and command encodings
_KEY_PATTERN = re.compile(r'^[^|;,=\s]+$')

# Chain name used for commands that conflict with everything
_STAR = "*"


class _AllKeys:
    """Distinguished key set that intersects every non-empty key set."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return (_AllKeys, ())

    def __repr__(self):
        return "ALL"

    def __bool__(self):
        return True


ALL_KEYS = _AllKeys()


class CommandKind(enum.Enum):
    CLIENT = "CLIENT"
    TERMINATE = "TERMINATE"
    SWITCH = "SWITCH"
    # Internal filler for log holes, never delivered to clients
    NOOP = "NOOP"


class ProtocolKind(enum.Enum):
    """Protocol families, declared in the oracle's tie-break order."""

    OLIGARCHIC = "OLIGARCHIC"
    DEMOCRATIC = "DEMOCRATIC"
    MONARCHIC = "MONARCHIC"

    @property
    def rank(self):
        return list(ProtocolKind).index(self)

    @classmethod
    def parse(cls, name):
        """
        Parse a protocol kind from its name, case-insensitively.

        Raises:
            ConfigurationError: If the name is not a known family
        """
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise ConfigurationError(f"Unknown protocol kind: {name}") from None


@dataclass(frozen=True)
class Command:
    """
    Client-submitted unit of work, or one of the special commands.

    cmd_id is (client id, client sequence number) and stays the same across
    retransmissions, so deduplication is by identity rather than payload.
    """

    cmd_id: tuple
    kind: CommandKind
    key_set: object = frozenset()
    payload: bytes = b""
    switch_target: ProtocolKind | None = None

    def __post_init__(self):
        if self.key_set is not ALL_KEYS:
            keys = frozenset(self.key_set)
            for key in keys:
                if not _KEY_PATTERN.match(str(key)):
                    raise UsageError(f"Invalid object key: {key!r}")
            object.__setattr__(self, "key_set", keys)
        if self.kind is CommandKind.TERMINATE and self.key_set is not ALL_KEYS:
            raise UsageError("Terminate commands must conflict with every command")
        if self.kind is CommandKind.SWITCH and self.switch_target is None:
            raise UsageError("Switch commands need a target protocol")

    @classmethod
    def client(cls, client_id, seq, keys, payload=b""):
        return cls((str(client_id), int(seq)), CommandKind.CLIENT, frozenset(keys), bytes(payload))

    @classmethod
    def switch(cls, target, origin, seq):
        """Build the Switch command a node proposes to Meta-Consensus."""
        target = ProtocolKind.parse(target) if not isinstance(target, ProtocolKind) else target
        return cls((f"switch-n{origin}", int(seq)), CommandKind.SWITCH, frozenset(),
                   target.value.encode(), target)

    @classmethod
    def terminate(cls, era, successor=None):
        """
        Build the Terminate marker closing `era`.

        The successor Switch command travels in the payload so that learning
        Terminate also tells a lagging node what era+1 runs.
        """
        payload = successor.encode().encode() if successor is not None else b""
        target = successor.switch_target if successor is not None else None
        return cls(("terminate", int(era)), CommandKind.TERMINATE, ALL_KEYS, payload, target)

    @classmethod
    def noop(cls, cmd_id):
        return cls(tuple(cmd_id), CommandKind.NOOP, frozenset())

    @property
    def is_all(self):
        return self.key_set is ALL_KEYS

    @property
    def label(self):
        return f"{self.cmd_id[0]}:{self.cmd_id[1]}"

    @property
    def successor(self):
        """The Switch command carried by a Terminate, if any."""
        if self.kind is not CommandKind.TERMINATE or not self.payload:
            return None
        return Command.decode(self.payload.decode())

    def keys_text(self):
        if self.is_all:
            return "ALL"
        return ",".join(sorted(str(k) for k in self.key_set))

    def encode(self):
        """Canonical text form: cmd_id|kind|sorted_keys_or_ALL|payload_hex."""
        return f"{self.label}|{self.kind.value}|{self.keys_text()}|{self.payload.hex()}"

    @classmethod
    def decode(cls, text):
        parts = text.split("|")
        if len(parts) != 4:
            raise UsageError(f"Malformed command encoding: {text!r}")
        label, kind_name, keys, payload_hex = parts
        client_id, _, seq = label.rpartition(":")
        kind = CommandKind(kind_name)
        payload = bytes.fromhex(payload_hex)
        key_set = ALL_KEYS if keys == "ALL" else frozenset(k for k in keys.split(",") if k)
        target = None
        if kind is CommandKind.SWITCH:
            target = ProtocolKind(payload.decode())
        elif kind is CommandKind.TERMINATE and payload:
            target = cls.decode(payload.decode()).switch_target
        return cls((client_id, int(seq)), kind, key_set, payload, target)

    def __repr__(self):
        return f"<{self.kind.value} {self.label} keys={self.keys_text()}>"


def conflicts(a, b):
    """
    Return True iff the two commands do not commute.

    Key sets intersect, where ALL intersects every non-empty set and itself.
    """
    if not a.key_set or not b.key_set:
        return False
    if a.is_all or b.is_all:
        return True
    return not a.key_set.isdisjoint(b.key_set)


def classic_quorum_size(n):
    """Smallest strict majority of n nodes."""
    if not isinstance(n, int) or n <= 0:
        raise UsageError(f"Quorum size needs a positive node count, got {n!r}")
    return n // 2 + 1


def fast_quorum_size(n):
    """Fast quorum: ceil(3n/4) nodes."""
    if not isinstance(n, int) or n <= 0:
        raise UsageError(f"Quorum size needs a positive node count, got {n!r}")
    return -(-3 * n // 4)


@dataclass
class CStruct:
    """Append-only sequence of decided commands, compared up to commutation."""

    seq: list = field(default_factory=list)

    def append(self, cmd):
        if any(c.cmd_id == cmd.cmd_id for c in self.seq):
            raise UsageError(f"{cmd.label} is already part of the C-struct")
        self.seq.append(cmd)
        return self

    def ids(self):
        return [c.cmd_id for c in self.seq]

    def __len__(self):
        return len(self.seq)

    def __iter__(self):
        return iter(self.seq)


def _as_seq(value):
    return list(value.seq) if isinstance(value, CStruct) else list(value)


def _universe(*seqs):
    keys = set()
    for seq in seqs:
        for cmd in seq:
            if not cmd.is_all:
                keys.update(cmd.key_set)
    return keys


def key_chains(seq, universe=None):
    """
    Project a command sequence onto per-key chains.

    Two commands conflict iff they share a chain, so the relative order of
    every conflicting pair is exactly the order inside the shared chains.
    ALL commands join every chain, plus their own.
    """
    seq = _as_seq(seq)
    if universe is None:
        universe = _universe(seq)
    chains = {key: [] for key in universe}
    chains[_STAR] = []
    for cmd in seq:
        if cmd.is_all:
            for chain in chains.values():
                chain.append(cmd.cmd_id)
        else:
            for key in cmd.key_set:
                chains[key].append(cmd.cmd_id)
    return chains


def _has_duplicates(seq):
    ids = [c.cmd_id for c in seq]
    return len(ids) != len(set(ids))


def cstruct_equivalent(a, b):
    """
    True iff b can be reached from a by swapping adjacent non-conflicting
    commands: same commands, same order on every conflicting pair.
    """
    a, b = _as_seq(a), _as_seq(b)
    if Counter(c.cmd_id for c in a) != Counter(c.cmd_id for c in b):
        return False
    universe = _universe(a, b)
    return key_chains(a, universe) == key_chains(b, universe)


def cstruct_prefix_consistent(a, b):
    """
    True iff a and b are prefixes of a common C-struct.

    On every chain the shorter history must be a literal prefix of the
    longer one. That single rule rejects reordered conflicting pairs and
    pairs each history decided without the other.
    """
    a, b = _as_seq(a), _as_seq(b)
    if _has_duplicates(a) or _has_duplicates(b):
        return False
    universe = _universe(a, b)
    chains_a = key_chains(a, universe)
    chains_b = key_chains(b, universe)
    for key, la in chains_a.items():
        lb = chains_b[key]
        short, long_ = (la, lb) if len(la) <= len(lb) else (lb, la)
        if long_[:len(short)] != short:
            return False
    return True


def first_inconsistency(a, b):
    """
    Locate the first chain on which a and b disagree.

    Returns:
        tuple: (key, position, id_in_a, id_in_b) or None if consistent
    """
    a, b = _as_seq(a), _as_seq(b)
    universe = _universe(a, b)
    chains_a = key_chains(a, universe)
    chains_b = key_chains(b, universe)
    for key in sorted(chains_a, key=str):
        la, lb = chains_a[key], chains_b[key]
        for i in range(min(len(la), len(lb))):
            if la[i] != lb[i]:
                return key, i, la[i], lb[i]
    return None
