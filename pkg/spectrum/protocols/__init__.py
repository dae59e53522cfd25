"""Consensus plugins, one per protocol family."""

from spectrum.model import ProtocolKind


def register_defaults(registry):
    from spectrum.plugin_api import LearnOrderExecutor
    from spectrum.protocols.democratic import DemocraticAgreement, DependencyGraphExecutor
    from spectrum.protocols.monarchic import MonarchicAgreement
    from spectrum.protocols.oligarchic import OligarchicAgreement

    registry.register(ProtocolKind.MONARCHIC, MonarchicAgreement, LearnOrderExecutor)
    registry.register(ProtocolKind.OLIGARCHIC, OligarchicAgreement, LearnOrderExecutor)
    registry.register(ProtocolKind.DEMOCRATIC, DemocraticAgreement, DependencyGraphExecutor)
    return registry
