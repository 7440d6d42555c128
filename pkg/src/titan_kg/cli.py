"""Command-line front-end: ingest, census, exec, ask, gen, eval, registry.

Every failure exits non-zero with a single machine-parseable line on
stderr of the form ``ErrorClass: message``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import datagen
from .errors import (
    MissingStartKind,
    StartKindMismatch,
    TitanError,
    UnparseablePlan,
)
from .eval import EvalRecord, aggregate_report, bleu, exact_match, raw_match, rouge_1, rouge_l
from .executor import ExecutionResult, execute
from .kg import (
    BuildOptions,
    KnowledgeGraph,
    build_graph,
    link_entities,
    node_census,
    parse_stix_bundle,
)
from .ontology import EntityKind, RelationRegistry, build_default_registry
from .pathlang import PathProgram, TypeSeed, parse_path, render_path, validate_program
from .planner import EndpointConfig, MockPlanner, PlannerRequest, RemotePlanner


def _uint64(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _load_graph(snapshot: str) -> KnowledgeGraph:
    return KnowledgeGraph.load_snapshot(Path(snapshot).read_text("utf-8"))


def _census_lines(graph: KnowledgeGraph) -> list[str]:
    census = node_census(graph)
    lines = [f"{kind.value}\t{census.per_kind[kind]}" for kind in EntityKind]
    lines.append(f"nodes\t{census.total_nodes}")
    lines.append(f"edges\t{census.total_edges}")
    return lines


def cmd_ingest(args) -> int:
    objects = []
    for bundle_path in args.bundles:
        objects.extend(parse_stix_bundle(Path(bundle_path).read_bytes()))
    registry = build_default_registry(include_subtechniques=not args.no_subtechniques)
    graph = build_graph(objects, registry, BuildOptions(
        drop_revoked=not args.keep_revoked, lenient=not args.strict))
    Path(args.out).write_text(graph.export_snapshot(), "utf-8")
    for line in _census_lines(graph):
        print(line)
    if graph.skipped:
        print(f"skipped\t{len(graph.skipped)}")
    print(f"snapshot\t{args.out}")
    return 0


def cmd_census(args) -> int:
    graph = _load_graph(args.snapshot)
    actual = {line.split("\t")[0]: int(line.split("\t")[1])
              for line in _census_lines(graph)}
    if not args.expected:
        for line in _census_lines(graph):
            print(line)
        return 0
    expected: dict[str, int] = {}
    for raw in Path(args.expected).read_text("utf-8").splitlines():
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        key, value = raw.split("\t")
        expected[key] = int(value)
    print(f"{'kind':<18}{'actual':>8}{'expected':>10}{'delta%':>8}")
    for key, actual_count in actual.items():
        if key not in expected:
            continue
        want = expected[key]
        delta = 100.0 * (actual_count - want) / want if want else float("inf")
        print(f"{key:<18}{actual_count:>8}{want:>10}{delta:>8.1f}")
    return 0


def _resolve_start(graph: KnowledgeGraph, names: list[str]) -> tuple[str, ...]:
    ids: list[str] = []
    for name in names:
        found = graph.find_by_name(name)
        if not found:
            raise StartKindMismatch(f"no node named {name!r} in the graph")
        ids.extend(found)
    return tuple(ids)


def _validate_for_start(graph: KnowledgeGraph, registry: RelationRegistry,
                        program: PathProgram, start_ids: tuple[str, ...]):
    """Infer the start kind from candidate start nodes.

    Tries each distinct kind among the start nodes in order; the first
    kind the program type-checks against wins, and only nodes of that
    kind are kept.
    """
    if isinstance(program.steps[0], TypeSeed):
        return validate_program(program, registry), None
    if not start_ids:
        raise MissingStartKind("path needs start entities, none resolved")
    tried = []
    kinds = list(dict.fromkeys(graph.node(nid).kind for nid in start_ids))
    last_error: TitanError | None = None
    for kind in kinds:
        try:
            typed = validate_program(program, registry, start_kind=kind)
        except TitanError as exc:
            tried.append(kind.value)
            last_error = exc
            continue
        keep = tuple(nid for nid in start_ids if graph.node(nid).kind is kind)
        return typed, keep
    raise last_error if last_error is not None else MissingStartKind(
        f"no usable start kind among {tried}")


def cmd_exec(args) -> int:
    graph = _load_graph(args.snapshot)
    registry = build_default_registry()
    program = parse_path(args.path, registry)
    start_ids = _resolve_start(graph, args.start) if args.start else ()
    typed, keep = _validate_for_start(graph, registry, program, start_ids)
    result = execute(graph, typed, start=keep)
    print(f"path\t{render_path(typed.program, 'token')}")
    print(result.to_text(graph), end="")
    return 0


def run_question(
    graph: KnowledgeGraph,
    planner,
    question: str,
    mode: str = "cot",
    registry: RelationRegistry | None = None,
) -> tuple[ExecutionResult, "PathProgram", str | None]:
    """The full loop: plan, link entities when needed, validate, execute."""
    registry = registry or build_default_registry()
    response = planner.plan(PlannerRequest(question=question, mode=mode))
    if response.path is None:
        raise UnparseablePlan("planner returned no usable path",
                              raw_text=response.raw_text)
    if response.start_entities:
        start_ids = _resolve_start(graph, list(response.start_entities))
    else:
        # NoCoT-style response: link the question's words against the
        # graph's node names.
        mentions = link_entities(question, graph)
        start_ids = tuple(nid for m in mentions for nid in m.node_ids)
    typed, keep = _validate_for_start(graph, registry, response.path, start_ids)
    result = execute(graph, typed, start=keep)
    return result, typed.program, response.cot


def cmd_ask(args) -> int:
    graph = _load_graph(args.snapshot)
    registry = build_default_registry()
    if args.planner == "mock":
        if not args.dataset:
            raise TitanError("the mock planner needs --dataset to build its index")
        samples = datagen.load_dataset(Path(args.dataset).read_text("utf-8"))
        planner = MockPlanner(samples, registry)
    else:
        planner = RemotePlanner(EndpointConfig.from_env(), registry)
    result, program, cot = run_question(graph, planner, args.question,
                                        mode=args.mode, registry=registry)
    if cot:
        print(f"cot\t{cot}")
    print(f"path\t{render_path(program, 'token')}")
    print(result.to_text(graph), end="")
    return 0


def cmd_gen(args) -> int:
    graph = _load_graph(args.snapshot)
    registry = build_default_registry()
    if args.templates:
        document = Path(args.templates).read_text("utf-8")
    else:
        document = datagen.default_template_text()
    templates = datagen.load_templates(document, registry)
    config = datagen.DatasetConfig(
        rng_seed=args.seed,
        max_per_template=args.max_per_template,
        test_fraction=args.test_fraction,
        keep_empty=args.keep_empty,
    )
    split, table = datagen.generate_dataset(templates, graph, config, registry)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "train.jsonl").write_text(datagen.dataset_to_jsonl(split.train), "utf-8")
    (outdir / "test.jsonl").write_text(datagen.dataset_to_jsonl(split.test), "utf-8")
    (outdir / "profile.txt").write_text(table, "utf-8")
    print(table, end="")
    print(f"out\t{outdir}")
    return 0


def cmd_eval(args) -> int:
    registry = build_default_registry()
    references = datagen.load_dataset(Path(args.dataset).read_text("utf-8"))
    pred_lines = [line for line in
                  Path(args.predictions).read_text("utf-8").splitlines() if line.strip()]
    if len(pred_lines) != len(references):
        raise TitanError(f"predictions ({len(pred_lines)}) and dataset "
                         f"({len(references)}) have different lengths")
    records = []
    for index, (ref, line) in enumerate(zip(references, pred_lines)):
        pred = json.loads(line)
        ref_program = parse_path(ref.path, registry)
        em = em_raw = 0
        pred_program = None
        try:
            pred_program = parse_path(pred["path"], registry)
        except (TitanError, KeyError):
            pass
        if pred_program is not None:
            em = exact_match(pred_program, ref_program)
            em_raw = raw_match(pred_program, ref_program)
        pred_cot = pred.get("cot") or ""
        has_text = bool(pred_cot and ref.cot)
        records.append(EvalRecord(
            bucket=ref.bucket, operators=frozenset(ref.operators),
            em=em, em_raw=em_raw,
            rouge_l=rouge_l(pred_cot, ref.cot) if has_text else None,
            rouge_1=rouge_1(pred_cot, ref.cot) if has_text else None,
            bleu=bleu(pred_cot, ref.cot) if has_text else None,
            sample_index=index,
            predicted_path=(render_path(pred_program, "token")
                            if pred_program is not None else ""),
            reference_path=render_path(ref_program, "token"),
        ))
    report = aggregate_report(records)
    print(report.to_text(), end="")
    if args.out:
        Path(args.out).write_text(report.to_records(), "utf-8")
    return 0


def cmd_registry(args) -> int:
    table = build_default_registry().to_table()
    if args.out:
        Path(args.out).write_text(table, "utf-8")
    else:
        print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="titan",
        description="CTI knowledge graph: ingest STIX, run relational paths, "
                    "generate datasets, evaluate planners.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a graph snapshot from STIX bundles")
    p.add_argument("bundles", nargs="+", help="STIX bundle JSON file(s)")
    p.add_argument("--out", required=True, help="snapshot output path")
    p.add_argument("--strict", action="store_true",
                   help="fail on relationships with no registry signature")
    p.add_argument("--keep-revoked", action="store_true",
                   help="keep revoked/deprecated objects")
    p.add_argument("--no-subtechniques", action="store_true",
                   help="drop the subtechnique relation from the registry")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("census", help="per-kind node counts of a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--expected", help="expected-count table (kind<TAB>count lines)")
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("exec", help="execute a literal path")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--path", required=True, help="token or display form path")
    p.add_argument("--start", action="append", default=[],
                   help="start entity name (repeatable)")
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("ask", help="plan a question, then execute the path")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--planner", choices=("mock", "remote"), default="mock")
    p.add_argument("--mode", choices=("cot", "nocot"), default="cot")
    p.add_argument("--dataset", help="dataset file backing the mock planner")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("gen", help="generate a question/CoT/path dataset")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--templates", help="template corpus (default: shipped corpus)")
    p.add_argument("--seed", type=_uint64, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--max-per-template", type=int, default=40)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--keep-empty", action="store_true",
                   help="keep samples whose answer set is empty")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval", help="score predictions against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True,
                   help="JSONL with one {\"path\": ..., \"cot\": ...} per dataset row")
    p.add_argument("--out", help="also write the report as JSONL records")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("registry", help="print the relation signature table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_registry)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TitanError as exc:
        message = " ".join(str(exc).split())
        print(f"{type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"FileNotFoundError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
