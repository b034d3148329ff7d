"""Single-fault mutants of the demo configuration, one per audit rule."""

from __future__ import annotations

from dataclasses import replace

from twinrt.config import ManagerConfig, TwinConfiguration
from twinrt.engine import Direction, Mapping, Schedule


def mutate(config: TwinConfiguration, conclusion: str) -> TwinConfiguration:
    """Return a copy of ``config`` violating exactly ``conclusion``."""
    if conclusion == "C1":
        gw = config.gateways[0]
        broken = replace(gw, descriptor=replace(gw.descriptor, endpoint="  "))
        return replace(config, gateways=(broken,) + config.gateways[1:])
    if conclusion == "C2":
        # no models at all; drop everything that would otherwise dangle
        managers = tuple(ManagerConfig(m.manager_id, models=(), delegations=m.delegations)
                         for m in config.managers)
        return replace(config, models=(), mappings=(), services=(), managers=managers)
    if conclusion == "C3":
        # the model still exists but nobody is responsible for it
        managers = tuple(ManagerConfig(m.manager_id, models=(), delegations=m.delegations)
                         for m in config.managers)
        return replace(config, managers=managers)
    if conclusion == "C4":
        return replace(config, data=replace(config.data, mandatory_metadata=False))
    if conclusion == "C5":
        # command-only gateway use: write flow without any read/observe flow
        command_only = Mapping("m-command", "tank", "main", "valve_target",
                               "tank01", "valve", Direction.DT_TO_AS, Schedule(every=1))
        return replace(config, mappings=(command_only,))
    if conclusion == "C6":
        ungated = tuple(replace(s, grant=None) if i == 0 else s
                        for i, s in enumerate(config.services))
        return replace(config, services=ungated)
    if conclusion == "C7":
        ghost = Mapping("m-ghost", "tank", "main", "level", "ghost", "level",
                        Direction.AS_TO_DT, Schedule(every=1))
        return replace(config, mappings=config.mappings + (ghost,))
    raise ValueError(f"unknown conclusion {conclusion!r}")
