import json
from pathlib import Path

import numpy as np
import pytest

from skiptrack.config import ModelConfig
from skiptrack.model import init_model

REPO = Path(__file__).resolve().parent.parent
SCHEMAS = REPO / "docs" / "schemas"


def load_schema(name: str) -> dict:
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


# Small enough for fast forwards, big enough to exercise every code path.
TINY = ModelConfig(depth=4, l_star=2, embed_dim=16, heads=2, patch=8, template_side=16,
                   search_side=32, selector_hidden=12, head_channels=4)


@pytest.fixture(scope="session")
def tiny_cfg() -> ModelConfig:
    return TINY


@pytest.fixture(scope="session")
def tiny_model():
    return init_model(TINY, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
