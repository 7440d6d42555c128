"""Planner contract, deterministic mock, remote client, and output parsing.

A planner maps a question to a path program plus optional reasoning text
and start entities.  The mock planner answers from a question index built
over a generated dataset and is what end-to-end tests run against; the
remote planner talks to any chat-completion-style HTTP endpoint.
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol

import requests

from .datagen import Sample
from .errors import PlannerUnavailable, TitanError, UnparseablePlan
from .ontology import RelationRegistry, build_default_registry
from .pathlang import PathProgram, _split_names, parse_path
from .prompts import PLANNER_SYSTEM_PROMPT_V1, render_system_prompt

logger = logging.getLogger(__name__)

_PATH_BLOCK = re.compile(r"<PATH>.*?</PATH>", re.S)
_ENTITY_BLOCK = re.compile(r"<ENTITY>(.*?)</ENTITY>", re.S)


@dataclass(frozen=True)
class PlannerRequest:
    question: str
    mode: str = "cot"  # "cot" | "nocot"

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if self.mode not in ("cot", "nocot"):
            raise ValueError(f"unknown planner mode {self.mode!r}")


@dataclass(frozen=True)
class PlannerResponse:
    """``path`` is None when the raw text held no parseable path block;
    consumers surface that as :class:`UnparseablePlan`."""

    raw_text: str
    cot: str | None
    path: PathProgram | None
    start_entities: tuple[str, ...] = ()
    guessed: bool = False


class Planner(Protocol):
    def plan(self, request: PlannerRequest) -> PlannerResponse: ...


def parse_planner_output(
    raw_text: str,
    registry: RelationRegistry | None = None,
) -> tuple[str | None, PathProgram, tuple[str, ...]]:
    """Split raw planner text into (cot, path, start entities).

    The CoT is everything before the first ``<PATH>``; the path is the
    first well-formed path block (later blocks are ignored); start
    entities come from an optional ``<ENTITY> ... </ENTITY>`` block.
    """
    registry = registry or build_default_registry()
    program = None
    for match in _PATH_BLOCK.finditer(raw_text):
        try:
            program = parse_path(match.group(), registry)
            break
        except TitanError:
            continue
    if program is None:
        raise UnparseablePlan("no well-formed <PATH> block in planner output",
                              raw_text=raw_text)

    cot = raw_text.split("<PATH>", 1)[0]
    entity_match = _ENTITY_BLOCK.search(cot)
    entities: tuple[str, ...] = ()
    if entity_match:
        entities = tuple(_split_names(entity_match.group(1)))
        cot = cot[:entity_match.start()] + cot[entity_match.end():]
    cot = cot.strip() or None
    return cot, program, entities


def _token_overlap(a: set[str], b: set[str]) -> float:
    """Bag-of-tokens similarity: |a ∩ b| / |a ∪ b| (0 when both empty)."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


class MockPlanner:
    """Looks questions up in a dataset; unknown questions get the nearest
    indexed question by token overlap, flagged ``guessed=True``."""

    def __init__(self, samples: Iterable[Sample],
                 registry: RelationRegistry | None = None):
        self._registry = registry or build_default_registry()
        self._index: dict[str, Sample] = {}
        for sample in samples:
            self._index.setdefault(self._norm(sample.question), sample)
        self._bags = [(set(q.split()), q) for q in sorted(self._index)]

    @staticmethod
    def _norm(question: str) -> str:
        return " ".join(question.casefold().split())

    def plan(self, request: PlannerRequest) -> PlannerResponse:
        key = self._norm(request.question)
        sample = self._index.get(key)
        guessed = sample is None
        if sample is None:
            bag = set(key.split())
            best_score, best_key = -1.0, None
            for candidate_bag, candidate_key in self._bags:
                score = _token_overlap(bag, candidate_bag)
                if score > best_score:
                    best_score, best_key = score, candidate_key
            if best_key is None:
                return PlannerResponse(raw_text="", cot=None, path=None, guessed=True)
            sample = self._index[best_key]

        path = parse_path(sample.path, self._registry)
        if request.mode == "cot":
            return PlannerResponse(
                raw_text=sample.cot, cot=sample.cot, path=path,
                start_entities=sample.start_entities, guessed=guessed)
        # NoCoT planners emit the path only; entity linking happens
        # executor-side.
        return PlannerResponse(raw_text=sample.path, cot=None, path=path,
                               guessed=guessed)


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    backoff_base: float = 1.0
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "EndpointConfig":
        env = env if env is not None else dict(os.environ)
        base_url = env.get("TITAN_LLM_BASE_URL", "")
        model = env.get("TITAN_LLM_MODEL", "")
        if not base_url or not model:
            raise PlannerUnavailable(
                "remote planner needs TITAN_LLM_BASE_URL and TITAN_LLM_MODEL")
        return cls(base_url=base_url, model=model,
                   api_key=env.get("TITAN_LLM_API_KEY", ""))


class RemotePlanner:
    """Chat-completion-style HTTP client with bounded retry/backoff.

    Safe for concurrent use; ``max_in_flight`` caps simultaneous requests.
    """

    def __init__(self, config: EndpointConfig,
                 registry: RelationRegistry | None = None,
                 prompt_template: str = PLANNER_SYSTEM_PROMPT_V1,
                 session: requests.Session | None = None):
        self._config = config
        self._registry = registry or build_default_registry()
        self._prompt_template = prompt_template
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max(1, config.max_in_flight))

    def _request_body(self, request: PlannerRequest) -> dict:
        system = render_system_prompt(self._registry, mode=request.mode,
                                      template=self._prompt_template)
        return {
            "model": self._config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": request.question},
            ],
            "temperature": 0,
        }

    def plan(self, request: PlannerRequest) -> PlannerResponse:
        url = self._config.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self._config.api_key:
            headers["Authorization"] = f"Bearer {self._config.api_key}"
        body = self._request_body(request)

        last_error: Exception | None = None
        for attempt in range(self._config.max_retries + 1):
            if attempt:
                time.sleep(self._config.backoff_base * 2 ** (attempt - 1))
            try:
                with self._gate:
                    reply = self._session.post(url, json=body, headers=headers,
                                               timeout=self._config.timeout)
                reply.raise_for_status()
                payload = reply.json()
                break
            except (requests.RequestException, ValueError) as exc:
                logger.warning("planner endpoint attempt %d failed: %s",
                               attempt + 1, exc)
                last_error = exc
        else:
            raise PlannerUnavailable(f"planner endpoint failed: {last_error}") \
                from last_error

        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise UnparseablePlan(f"endpoint reply missing message content: {exc}",
                                  raw_text=str(payload)) from exc
        cot, program, entities = parse_planner_output(content, self._registry)
        return PlannerResponse(raw_text=content, cot=cot, path=program,
                               start_entities=entities)
