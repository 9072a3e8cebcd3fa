"""Bundled tree-network fixtures with 24 h demand-ramp scenarios.

``hypothetical``: 7 nodes, 6 pipes, 1 supply, 3 demands.
``actual``: 25 nodes, 24 pipes, 1 supply, 8 demands.
Both ship height profiles that expand pipes into virtual pipes.
"""

from __future__ import annotations

from importlib import resources

from .network import apply_height_profiles, parse_network, parse_profiles, parse_scenario

FIXTURES = ("hypothetical", "actual")


def fixture_path(name: str, kind: str):
    """Path of a bundled file; ``kind`` is one of ``net``, ``scn``, ``prof``."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return resources.files("gasmor") / "data" / f"{name}.{kind}.csv"


def load_fixture(name: str, profiles: bool = True):
    """Return ``(network, scenario)`` for a bundled fixture."""
    net = parse_network(fixture_path(name, "net").read_text(encoding="utf-8"))
    if profiles:
        net = apply_height_profiles(net, parse_profiles(fixture_path(name, "prof").read_text(encoding="utf-8")))
    scn = parse_scenario(fixture_path(name, "scn").read_text(encoding="utf-8"), net)
    return net, scn
