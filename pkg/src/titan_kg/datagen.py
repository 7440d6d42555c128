"""Dataset synthesis: typed question templates, CoT prose, and splits.

A template couples question text containing typed placeholders such as
``[malware]`` (or ``[malware:1]`` when a kind repeats) with a path whose
entity slots (the start entity and/or select names) carry the same
placeholders.  Instantiation binds graph entities to the placeholders,
executes the path to obtain the answer set, and renders a deterministic
step-by-step explanation ending in the token-form path.

The corpus file is JSONL, one template per line (see docs/formats.md);
``data/templates_core.jsonl`` ships a seed corpus covering every length
bucket and operator.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import random
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, Protocol

from .errors import TemplateSchemaError, TitanError
from .executor import execute
from .kg import KnowledgeGraph
from .ontology import KIND_BY_TOKEN, EntityKind, RelationRegistry, build_default_registry
from .pathlang import (
    ExecCommon,
    ExecDifference,
    Filter,
    PathProgram,
    Select,
    Traverse,
    TypeSeed,
    TypedProgram,
    parse_path,
    profile,
    render_path,
    validate_program,
)

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\[([a-z-]+)(?::(\d+))?\]")


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Placeholder:
    token: str
    kind: EntityKind


@dataclass(frozen=True)
class QuestionTemplate:
    id: str
    text: str
    path: PathProgram
    typed_path: TypedProgram
    answer_kind: EntityKind
    start_slot: str | None          # placeholder token bound to the start entity
    placeholders: tuple[Placeholder, ...]  # in first-appearance order in the text


@dataclass(frozen=True)
class Sample:
    """One dataset row; the path re-executes to exactly ``answers``."""

    question: str
    cot: str
    path: str
    start_entities: tuple[str, ...]
    answers: tuple[str, ...]
    template_id: str
    bucket: str
    operators: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps({
            "question": self.question,
            "cot": self.cot,
            "path": self.path,
            "start_entities": list(self.start_entities),
            "answers": list(self.answers),
            "template_id": self.template_id,
            "bucket": {"length": self.bucket, "operators": list(self.operators)},
        }, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "Sample":
        rec = json.loads(line)
        bucket = rec.get("bucket") or {}
        return cls(
            question=rec["question"], cot=rec.get("cot", ""), path=rec["path"],
            start_entities=tuple(rec.get("start_entities", ())),
            answers=tuple(rec.get("answers", ())),
            template_id=rec.get("template_id", ""),
            bucket=bucket.get("length", ""),
            operators=tuple(bucket.get("operators", ())),
        )


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[Sample, ...]
    test: tuple[Sample, ...]


@dataclass(frozen=True)
class DatasetConfig:
    rng_seed: int = 0
    max_per_template: int | None = 40
    test_fraction: float = 0.2
    keep_empty: bool = False


def _placeholders_in(text: str) -> list[str]:
    seen: list[str] = []
    for m in _PLACEHOLDER.finditer(text):
        token = m.group(0)
        if token not in seen:
            seen.append(token)
    return seen


def _placeholder_kind(token: str) -> EntityKind:
    m = _PLACEHOLDER.fullmatch(token)
    if m is None or m.group(1) not in KIND_BY_TOKEN:
        raise TemplateSchemaError(f"bad placeholder {token!r}")
    return KIND_BY_TOKEN[m.group(1)]


def _select_slots(program: PathProgram) -> list[str]:
    slots = []
    for step in program.steps:
        if isinstance(step, Select):
            slots.extend(n for n in step.names if _PLACEHOLDER.fullmatch(n))
    return slots


def default_template_text() -> str:
    """The shipped seed corpus."""
    return (resources.files("titan_kg") / "data" / "templates_core.jsonl").read_text("utf-8")


def load_templates(
    document: str,
    registry: RelationRegistry | None = None,
) -> list[QuestionTemplate]:
    """Parse and cross-check a JSONL template corpus.

    Each record needs ``id``, ``text``, ``path``, ``answer_kind`` and an
    optional ``start`` placeholder.  Placeholders in the text must equal
    the path's start/select slots, the path must type-check with the
    placeholder kinds, and its final kind must equal ``answer_kind``.
    """
    registry = registry or build_default_registry()
    templates: list[QuestionTemplate] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(document.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TemplateSchemaError(f"line {lineno}: not valid JSON: {exc.msg}") from exc
        tid = rec.get("id")
        if not tid or not isinstance(tid, str):
            raise TemplateSchemaError(f"line {lineno}: missing template id")
        if tid in seen_ids:
            raise TemplateSchemaError(f"template {tid}: duplicate id")
        seen_ids.add(tid)

        def fail(reason: str) -> TemplateSchemaError:
            return TemplateSchemaError(f"template {tid}: {reason}")

        text = rec.get("text")
        path_text = rec.get("path")
        answer_token = rec.get("answer_kind")
        if not text or not path_text or answer_token not in KIND_BY_TOKEN:
            raise fail("record needs text, path, and a valid answer_kind")
        answer_kind = KIND_BY_TOKEN[answer_token]

        try:
            program = parse_path(path_text, registry)
        except TitanError as exc:
            raise fail(f"path does not parse: {exc}") from exc

        start_slot = rec.get("start")
        text_slots = _placeholders_in(text)
        select_slots = _select_slots(program)
        path_slots = ([start_slot] if start_slot else []) + select_slots
        if sorted(set(text_slots)) != sorted(set(path_slots)):
            raise fail(f"placeholders in text {text_slots} do not match "
                       f"path slots {path_slots}")
        placeholders = tuple(Placeholder(t, _placeholder_kind(t)) for t in text_slots)

        has_seed = isinstance(program.steps[0], TypeSeed)
        if start_slot and has_seed:
            raise fail("start slot conflicts with a type-seeded path")
        if not start_slot and not has_seed:
            raise fail("path needs either a type seed or a start slot")

        start_kind = _placeholder_kind(start_slot) if start_slot else None
        try:
            typed = validate_program(program, registry, start_kind=start_kind)
        except TitanError as exc:
            raise fail(f"path does not type-check: {exc}") from exc
        if typed.answer_kind is not answer_kind:
            raise fail(f"answer_kind {answer_kind.value!r} does not match the "
                       f"path's final kind {typed.answer_kind.value!r}")

        # Select placeholders must match the frontier kind at their step.
        for i, step in enumerate(typed.steps):
            if isinstance(step, Select):
                at_kind = typed.kinds[i]
                for name in step.names:
                    if _PLACEHOLDER.fullmatch(name) and _placeholder_kind(name) is not at_kind:
                        raise fail(f"select placeholder {name!r} has the wrong kind "
                                   f"(frontier is {at_kind.value!r})")

        templates.append(QuestionTemplate(
            id=tid, text=text, path=program, typed_path=typed,
            answer_kind=answer_kind, start_slot=start_slot,
            placeholders=placeholders,
        ))
    return templates


def synthesize_cot(
    question: str,
    start_entities: tuple[str, ...],
    typed_program: TypedProgram,
) -> str:
    """Deterministic explanation: goal, one sentence per step, final path."""
    label = typed_program.start_kind.label
    if start_entities:
        opening = (f"The question is: {question} "
                   f"The reasoning starts from the {label} {', '.join(start_entities)}.")
    else:
        opening = (f"The question is: {question} "
                   f"The reasoning starts from every {label} node.")

    sentences = [opening]
    previous = typed_program.start_kind
    for i, step in enumerate(typed_program.steps, 1):
        kind_after = typed_program.kinds[i - 1]
        if isinstance(step, TypeSeed):
            sentences.append(f"Step {i}: Start from all nodes of type {step.kind.label}.")
        elif isinstance(step, Traverse):
            sentences.append(f"Step {i}: Follow the {step.rel} relation from the "
                             f"{previous.label} to the {kind_after.label}.")
        elif isinstance(step, Filter):
            sentences.append(f"Step {i}: Keep only entities matching '{step.keyword}'.")
        elif isinstance(step, Select):
            sentences.append(f"Step {i}: Branch the reasoning for {', '.join(step.names)}.")
        elif isinstance(step, ExecCommon):
            sentences.append(f"Step {i}: Take the common results across branches.")
        elif isinstance(step, ExecDifference):
            sentences.append(f"Step {i}: Take the different results across branches.")
        previous = kind_after

    sentences.append("The full reasoning path is: "
                     + render_path(typed_program.program, "token"))
    return " ".join(sentences)


def _substitute_path(program: PathProgram, binding: dict[str, str]) -> PathProgram:
    steps = []
    for step in program.steps:
        if isinstance(step, Select):
            steps.append(Select(tuple(binding.get(n, n) for n in step.names)))
        else:
            steps.append(step)
    return PathProgram(tuple(steps))


def _candidate_bindings(
    template: QuestionTemplate,
    graph: KnowledgeGraph,
    rng: random.Random,
    max_count: int | None,
) -> list[tuple[str, ...]]:
    """Entity-id tuples for the template's placeholders, deterministic
    under the rng; same-kind slots never bind the same entity twice."""
    pools = [graph.nodes_of_kind(p.kind) for p in template.placeholders]
    if not pools:
        return [()]
    if any(not pool for pool in pools):
        return []
    total = 1
    for pool in pools:
        total *= len(pool)
    if max_count is None or total <= max(4 * max_count, 512):
        combos = [t for t in itertools.product(*pools) if len(set(t)) == len(t)]
        if max_count is not None and len(combos) > max_count:
            combos = rng.sample(combos, max_count)
        return combos
    picked: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()
    attempts = 0
    while len(picked) < max_count and attempts < 20 * max_count:
        attempts += 1
        combo = tuple(rng.choice(pool) for pool in pools)
        if len(set(combo)) != len(combo) or combo in seen:
            continue
        seen.add(combo)
        picked.append(combo)
    return picked


def instantiate_template(
    template: QuestionTemplate,
    graph: KnowledgeGraph,
    rng_seed: int = 0,
    max_per_template: int | None = 40,
    keep_empty: bool = False,
    registry: RelationRegistry | None = None,
) -> list[Sample]:
    """Bind entities to the template and execute each instance.

    Start entities and select names are resolved by name at execution
    time, exactly as re-execution of the emitted sample will resolve
    them, so recorded answers always reproduce.  Bindings that fail to
    execute are dropped with a logged reason.
    """
    registry = registry or build_default_registry()
    rng = random.Random(_derive_seed(rng_seed, template.id))
    samples: list[Sample] = []
    for combo in _candidate_bindings(template, graph, rng, max_per_template):
        binding = {p.token: graph.node(nid).name
                   for p, nid in zip(template.placeholders, combo)}
        question = template.text
        for token, name in binding.items():
            question = question.replace(token, name)
        program = _substitute_path(template.path, binding)

        if template.start_slot:
            start_names: tuple[str, ...] = (binding[template.start_slot],)
            start_ids = graph.find_by_name(start_names[0])
            start_kind = template.typed_path.start_kind
        else:
            start_names = ()
            start_ids = None
            start_kind = None

        try:
            typed = validate_program(program, registry, start_kind=start_kind)
            result = execute(graph, typed, start=start_ids)
        except TitanError as exc:
            logger.debug("template %s: binding %s discarded: %s",
                         template.id, sorted(binding.values()), exc)
            continue

        answers = tuple(dict.fromkeys(node.name for node in result.answers))
        if not answers and not keep_empty:
            continue
        prof = profile(typed.program)
        samples.append(Sample(
            question=question,
            cot=synthesize_cot(question, start_names, typed),
            path=render_path(typed.program, "token"),
            start_entities=start_names,
            answers=answers,
            template_id=template.id,
            bucket=prof.bucket,
            operators=tuple(sorted(prof.operators)),
        ))
    return samples


def generate_dataset(
    templates: Iterable[QuestionTemplate],
    graph: KnowledgeGraph,
    config: DatasetConfig | None = None,
    registry: RelationRegistry | None = None,
) -> tuple[DatasetSplit, str]:
    """Instantiate every template and split into train/test.

    The split is stratified per template; a (template, entity-binding)
    combination lands in exactly one side, so the test set only contains
    combinations unseen during training.  Templates too small to feed
    both sides go wholly to train.  Deterministic for a fixed seed.
    """
    config = config or DatasetConfig()
    train: list[Sample] = []
    test: list[Sample] = []
    for template in sorted(templates, key=lambda t: t.id):
        samples = instantiate_template(
            template, graph,
            rng_seed=config.rng_seed,
            max_per_template=config.max_per_template,
            keep_empty=config.keep_empty,
            registry=registry,
        )
        n = len(samples)
        if n == 0:
            logger.info("template %s produced no samples", template.id)
            continue
        want_test = int(round(config.test_fraction * n))
        want_test = min(want_test, n - 1)
        if want_test < 1:
            logger.info("InsufficientBindings: template %s (%d sample(s)) "
                        "goes wholly to train", template.id, n)
            train.extend(samples)
            continue
        rng = random.Random(_derive_seed(config.rng_seed, template.id, "split"))
        test_idx = set(rng.sample(range(n), want_test))
        for i, sample in enumerate(samples):
            (test if i in test_idx else train).append(sample)

    split = DatasetSplit(train=tuple(train), test=tuple(test))
    return split, profile_table(split)


def profile_table(split: DatasetSplit) -> str:
    """Plain-text dataset profile: length buckets and operator counts."""
    def row(name: str, samples: tuple[Sample, ...]) -> str:
        lengths = {b: 0 for b in ("L1", "L2", "L3", "L4+")}
        operators = {o: 0 for o in ("filter", "select", "exec_common", "exec_difference")}
        for s in samples:
            lengths[s.bucket] += 1
            for op in s.operators:
                operators[op] += 1
        cells = [f"{name:<8}", f"{len(samples):>7}"]
        cells += [f"{lengths[b]:>7}" for b in ("L1", "L2", "L3", "L4+")]
        cells += [f"{operators[o]:>7}" for o in
                  ("filter", "select", "exec_common", "exec_difference")]
        return "".join(cells)

    header = ("".join([f"{'split':<8}", f"{'total':>7}", f"{'L1':>7}", f"{'L2':>7}",
                       f"{'L3':>7}", f"{'L4+':>7}", f"{'filter':>7}", f"{'select':>7}",
                       f"{'common':>7}", f"{'diff':>7}"]))
    return "\n".join([header, row("train", split.train), row("test", split.test)]) + "\n"


def dataset_to_jsonl(samples: Iterable[Sample]) -> str:
    return "".join(sample.to_json() + "\n" for sample in samples)


def load_dataset(text: str) -> list[Sample]:
    return [Sample.from_json(line) for line in text.splitlines() if line.strip()]


class ParaphraseClient(Protocol):
    def paraphrase(self, text: str) -> str: ...


def paraphrase_hook(sample: Sample, client: ParaphraseClient | None = None) -> Sample:
    """Optionally reword the question; identity when no client is set.

    The path and answers never change.  A failing client degrades to
    identity with a warning instead of aborting generation.
    """
    if client is None:
        return sample
    try:
        return replace(sample, question=client.paraphrase(sample.question))
    except Exception as exc:
        logger.warning("paraphrase client failed (%s); keeping original question", exc)
        return sample
