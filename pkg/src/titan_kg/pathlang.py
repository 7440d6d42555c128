"""Lexer, parser, serializer, and kind-flow checker for relational paths.

Two surface syntaxes are accepted:

* token form:   ``<PATH> is_malware_type <SEP> uses_attack_pattern </PATH>``
* display form: ``is_malware_type → uses_attack_pattern`` (``->`` also works)

Segment grammar (see docs/grammar.md for the EBNF):

* ``is_<kind>_type``           seeds the frontier with every node of a kind
* ``filter <keyword...>``      keeps entities matching a (multiword) keyword
* ``select <name> <name>...``  splits reasoning into one branch per name;
  names containing whitespace are double-quoted
* ``exec_common`` / ``exec_difference``   combine branches at the end
* anything else is a relation traversal

Operand whitespace is canonicalized at parse time (runs collapse to one
space), so parse∘render is the identity on parsed programs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .errors import (
    MalformedOperator,
    MissingStartKind,
    NoSuchSignature,
    OperatorPlacementError,
    PathSyntaxError,
    TypeFlowError,
    UnknownRelation,
)
from .ontology import (
    EntityKind,
    RelationRegistry,
    build_default_registry,
    kind_for_seed_relation,
    seed_relation_name,
)

PATH_OPEN = "<PATH>"
PATH_CLOSE = "</PATH>"
SEP = "<SEP>"

_ARROW_SPLIT = re.compile(r"→|->")


@dataclass(frozen=True)
class TypeSeed:
    kind: EntityKind


@dataclass(frozen=True)
class Traverse:
    rel: str


@dataclass(frozen=True)
class Filter:
    keyword: str

    def __post_init__(self):
        if not self.keyword.strip():
            raise MalformedOperator("filter requires a non-empty keyword")


@dataclass(frozen=True)
class Select:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 2:
            raise MalformedOperator("select requires at least two names")
        if any(not n.strip() for n in self.names):
            raise MalformedOperator("select names must be non-empty")


@dataclass(frozen=True)
class ExecCommon:
    pass


@dataclass(frozen=True)
class ExecDifference:
    pass


PathStep = Union[TypeSeed, Traverse, Filter, Select, ExecCommon, ExecDifference]

_OPERATOR_FLAGS = {
    Filter: "filter",
    Select: "select",
    ExecCommon: "exec_common",
    ExecDifference: "exec_difference",
}


@dataclass(frozen=True)
class PathProgram:
    """A structurally valid sequence of path steps.

    Construction enforces: non-empty; a type seed only as the first step;
    at most one select; at most one of exec_common/exec_difference, only
    as the final step, and only after a select.
    """

    steps: tuple[PathStep, ...]
    source: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.steps:
            raise PathSyntaxError("empty program")
        select_seen = False
        for i, step in enumerate(self.steps):
            if isinstance(step, TypeSeed) and i != 0:
                raise OperatorPlacementError(
                    f"type seed must be the first step (found at step {i + 1})")
            if isinstance(step, Select):
                if select_seen:
                    raise OperatorPlacementError("at most one select per program")
                select_seen = True
            if isinstance(step, (ExecCommon, ExecDifference)):
                if i != len(self.steps) - 1:
                    raise OperatorPlacementError(
                        "exec_common/exec_difference must be the final step")
                if not select_seen:
                    raise OperatorPlacementError(
                        "exec_common/exec_difference requires an earlier select")


def _split_names(text: str) -> list[str]:
    """Whitespace-split with double-quote grouping for multiword names."""
    names: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        if text[i] == '"':
            end = text.find('"', i + 1)
            if end < 0:
                raise PathSyntaxError(f"unterminated quote in {text!r}")
            name = text[i + 1:end].strip()
            if not name:
                raise MalformedOperator("empty quoted name")
            names.append(" ".join(name.split()))
            i = end + 1
        else:
            j = i
            while j < n and not text[j].isspace():
                if text[j] == '"':
                    raise PathSyntaxError(f"stray quote in {text!r}")
                j += 1
            names.append(text[i:j])
            i = j
    return names


def _parse_segment(segment: str, registry: RelationRegistry) -> PathStep:
    words = segment.split(None, 1)
    head = words[0]
    rest = words[1] if len(words) > 1 else ""

    seed_kind = kind_for_seed_relation(head)
    if seed_kind is not None:
        if rest:
            raise PathSyntaxError(f"unexpected tokens after {head!r}: {rest!r}")
        return TypeSeed(seed_kind)
    if head == "filter":
        if not rest:
            raise MalformedOperator("filter requires a keyword")
        return Filter(" ".join(rest.split()))
    if head == "select":
        return Select(tuple(_split_names(rest)))
    if head == "exec_common":
        if rest:
            raise MalformedOperator("exec_common takes no arguments")
        return ExecCommon()
    if head == "exec_difference":
        if rest:
            raise MalformedOperator("exec_difference takes no arguments")
        return ExecDifference()

    if rest:
        raise PathSyntaxError(f"unexpected tokens after relation {head!r}: {rest!r}")
    # Canonicalize context-free aliases now; defer context-dependent short
    # verbs (e.g. ``uses``) to validation, where the source kind is known.
    try:
        return Traverse(registry.normalize(head))
    except UnknownRelation:
        if registry.resolvable_from_some_kind(head):
            return Traverse(head)
        raise UnknownRelation(f"unknown relation {head!r}") from None


def parse_path(text: str, registry: RelationRegistry | None = None) -> PathProgram:
    """Parse token-form or display-form text into a program."""
    registry = registry or build_default_registry()
    stripped = text.strip()
    if not stripped:
        raise PathSyntaxError("empty path text")

    if stripped.startswith(PATH_OPEN) or stripped.endswith(PATH_CLOSE):
        if not (stripped.startswith(PATH_OPEN) and stripped.endswith(PATH_CLOSE)):
            raise PathSyntaxError("unbalanced <PATH> wrapper")
        inner = stripped[len(PATH_OPEN):-len(PATH_CLOSE)]
        if PATH_OPEN in inner or PATH_CLOSE in inner:
            raise PathSyntaxError("nested <PATH> wrapper")
        raw_segments = inner.split(SEP)
        if len(raw_segments) == 1 and not raw_segments[0].strip():
            raise PathSyntaxError("empty program")
    else:
        raw_segments = _ARROW_SPLIT.split(stripped)

    steps = []
    for raw in raw_segments:
        segment = raw.strip()
        if not segment:
            raise PathSyntaxError("empty path segment")
        steps.append(_parse_segment(segment, registry))
    return PathProgram(tuple(steps), source=text)


def _render_name(name: str) -> str:
    if '"' in name:
        raise ValueError(f"select name may not contain a double quote: {name!r}")
    if any(ch.isspace() for ch in name):
        return f'"{name}"'
    return name


def render_segment(step: PathStep) -> str:
    if isinstance(step, TypeSeed):
        return seed_relation_name(step.kind)
    if isinstance(step, Traverse):
        return step.rel
    if isinstance(step, Filter):
        return f"filter {step.keyword}"
    if isinstance(step, Select):
        return "select " + " ".join(_render_name(n) for n in step.names)
    if isinstance(step, ExecCommon):
        return "exec_common"
    if isinstance(step, ExecDifference):
        return "exec_difference"
    raise TypeError(f"not a path step: {step!r}")


def render_path(program: PathProgram, form: str = "token") -> str:
    """Serialize a program; ``parse_path(render_path(p))`` equals ``p``."""
    segments = [render_segment(step) for step in program.steps]
    if form == "token":
        return f"{PATH_OPEN} {f' {SEP} '.join(segments)} {PATH_CLOSE}"
    if form == "display":
        return " → ".join(segments)
    raise ValueError(f"unknown form {form!r} (expected 'token' or 'display')")


@dataclass(frozen=True)
class TypedProgram:
    """A program with relations canonicalized and a kind inferred per step.

    ``kinds[i]`` is the entity kind of the frontier after step ``i``;
    ``start_kind`` is the kind execution begins from.
    """

    program: PathProgram
    start_kind: EntityKind
    kinds: tuple[EntityKind, ...]

    @property
    def steps(self) -> tuple[PathStep, ...]:
        return self.program.steps

    @property
    def answer_kind(self) -> EntityKind:
        return self.kinds[-1]


def validate_program(
    program: PathProgram,
    registry: RelationRegistry | None = None,
    start_kind: EntityKind | None = None,
) -> TypedProgram:
    """Infer the entity kind at every step and canonicalize relations.

    Programs without a type seed need ``start_kind`` (normally the kind of
    the planner's start entities).  A relation that does not apply to the
    current kind is a :class:`TypeFlowError`.
    """
    registry = registry or build_default_registry()
    first = program.steps[0]
    if isinstance(first, TypeSeed):
        current = first.kind
    elif start_kind is not None:
        current = start_kind
    else:
        raise MissingStartKind("program has no type seed and no start kind was given")

    begin = current
    canonical: list[PathStep] = []
    kinds: list[EntityKind] = []
    for step in program.steps:
        if isinstance(step, Traverse):
            try:
                rel = registry.normalize(step.rel, current)
                sig = registry.signature_of(current, rel)
            except (UnknownRelation, NoSuchSignature) as exc:
                raise TypeFlowError(
                    f"relation {step.rel!r} does not apply to kind "
                    f"{current.value!r}: {exc}") from exc
            canonical.append(Traverse(rel))
            current = sig.target_kind
        else:
            canonical.append(step)
        kinds.append(current)

    return TypedProgram(
        program=PathProgram(tuple(canonical), source=program.source),
        start_kind=begin,
        kinds=tuple(kinds),
    )


@dataclass(frozen=True)
class PathProfile:
    """Length bucket and operator usage of a program."""

    length: int
    bucket: str
    operators: frozenset[str]


def profile(program: PathProgram) -> PathProfile:
    """Bucket a program by graph-touching steps and collect operator flags.

    Length counts type seeds and traversals; filter/select/exec steps do
    not touch new graph regions and are excluded.
    """
    length = sum(1 for s in program.steps if isinstance(s, (TypeSeed, Traverse)))
    if length <= 1:
        bucket = "L1"
    elif length == 2:
        bucket = "L2"
    elif length == 3:
        bucket = "L3"
    else:
        bucket = "L4+"
    flags = frozenset(flag for cls, flag in _OPERATOR_FLAGS.items()
                      if any(isinstance(s, cls) for s in program.steps))
    return PathProfile(length=length, bucket=bucket, operators=flags)
