#!/usr/bin/env python3
"""
Errors

Exception hierarchy shared by the simulator, the protocols and the harness.
"""


class SpectrumError(Exception):
    """Base class for every error raised by the spectrum package."""
    pass


class UsageError(SpectrumError, ValueError):
    """A function was called outside its domain (e.g. a quorum of 0 nodes)."""
    pass


class ConfigurationError(SpectrumError):
    """Unknown protocol kind, inconsistent registry or bad policy parameters."""
    pass


class ProtocolError(SpectrumError):
    """An internal protocol invariant was broken."""
    pass


class FaultScriptError(SpectrumError):
    """A fault script is malformed or exceeds the crash budget."""
    pass


class ScenarioError(SpectrumError):
    """A scenario file could not be parsed."""
    pass


class EraClosed(SpectrumError):
    """
    Raised when a command is proposed to an era whose Terminate was learned.

    Meta-Consensus catches it and re-routes the command to the newest era.
    """

    def __init__(self, era, cmd):
        super().__init__(f"era {era} is closed, cannot propose {cmd.label}")
        self.era = era
        self.cmd = cmd
