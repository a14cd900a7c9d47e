"""Virtual manifolds: scenes, integration, localization and Fredholm invariants."""

from ._core import (
    Expression,
    IndexSet,
    ParseError,
    Scene,
    SchemaError,
    StructureError,
    SupportError,
    bump_mass,
    commands,
    fnv1a_hex,
    fredholm_invariant,
    integrate_interval_cover,
    load_scene,
    parse_scene,
    run,
)

__all__ = [
    "Expression",
    "IndexSet",
    "ParseError",
    "Scene",
    "SchemaError",
    "StructureError",
    "SupportError",
    "bump_mass",
    "commands",
    "fnv1a_hex",
    "fredholm_invariant",
    "integrate_interval_cover",
    "load_scene",
    "parse_scene",
    "run",
]
