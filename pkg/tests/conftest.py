from pathlib import Path

import pytest

from fluorsqueeze.dynamics import ModelParams
from fluorsqueeze.scenario import load_scenario

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"

FIGURE_FIXTURES = [f"fig{fig}-line{line}" for fig in (1, 2) for line in (1, 2, 3, 4)]
RESONANT_FIXTURES = [n for n in FIGURE_FIXTURES if n.endswith(("line1", "line2"))]
DETUNED_FIXTURES = [n for n in FIGURE_FIXTURES if n.endswith(("line3", "line4"))]


def scenario_path(name: str) -> Path:
    return SCENARIO_DIR / f"{name}.yaml"


@pytest.fixture
def scenario():
    def load(name: str):
        return load_scenario(scenario_path(name))

    return load


@pytest.fixture
def params():
    def make(**changes) -> ModelParams:
        return ModelParams(**changes)

    return make


@pytest.fixture
def write_scenario(tmp_path):
    """Write a YAML document to a temporary scenario file."""

    def write(text: str, name: str = "scenario.yaml") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
