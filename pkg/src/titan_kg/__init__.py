"""Typed bidirectional CTI knowledge graph with an executable path language.

Subsystems: :mod:`~titan_kg.ontology` (kinds + relation registry),
:mod:`~titan_kg.kg` (STIX ingestion and the graph), :mod:`~titan_kg.pathlang`
(path parsing/validation), :mod:`~titan_kg.executor` (deterministic
interpretation), :mod:`~titan_kg.datagen` (question/CoT/path dataset),
:mod:`~titan_kg.planner` (question -> path planners), :mod:`~titan_kg.eval`
(exact match + text metrics), and :mod:`~titan_kg.cli`.
"""

from .errors import TitanError
from .ontology import EntityKind, RelationRegistry, build_default_registry
from .kg import KnowledgeGraph, build_graph, link_entities, node_census, parse_stix_bundle
from .pathlang import PathProgram, parse_path, profile, render_path, validate_program
from .executor import ExecutionResult, execute

__version__ = "0.1.0"

__all__ = [
    "EntityKind",
    "ExecutionResult",
    "KnowledgeGraph",
    "PathProgram",
    "RelationRegistry",
    "TitanError",
    "build_default_registry",
    "build_graph",
    "execute",
    "link_entities",
    "node_census",
    "parse_path",
    "parse_stix_bundle",
    "profile",
    "render_path",
    "validate_program",
    "__version__",
]
