from __future__ import annotations

from pathlib import Path

import pytest

from titan_kg.datagen import load_templates
from titan_kg.kg import BuildOptions, build_graph, parse_stix_bundle
from titan_kg.ontology import build_default_registry

from scalegen import build_scale_bundle

FIXTURE_BUNDLE = Path(__file__).parent / "fixtures" / "fixture_bundle.json"


@pytest.fixture(scope="session")
def registry():
    return build_default_registry()


@pytest.fixture(scope="session")
def fixture_objects():
    return parse_stix_bundle(FIXTURE_BUNDLE.read_bytes())


@pytest.fixture(scope="session")
def fixture_graph(fixture_objects, registry):
    return build_graph(fixture_objects, registry, BuildOptions())


@pytest.fixture(scope="session")
def scale_graph(registry):
    return build_graph(parse_stix_bundle(build_scale_bundle()), registry)


@pytest.fixture(scope="session")
def core_templates(registry):
    from titan_kg.datagen import default_template_text
    return load_templates(default_template_text(), registry)
