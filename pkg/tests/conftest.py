import json
from importlib import resources

import jsonschema
import numpy as np
import pytest


def load_schema(name: str) -> dict:
    return json.loads(resources.files("dcoe").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(doc: dict, name: str) -> None:
    jsonschema.validate(doc, load_schema(name), cls=jsonschema.Draft202012Validator)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
