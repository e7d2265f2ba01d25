import numpy as np
import pytest

from nestmix.model import validate_dataset
from nestmix.synthetic import Archetype, ScenarioSpec, generate

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list = []


@pytest.fixture
def tiny_data():
    rs = np.random.default_rng(5)
    y = np.concatenate([rs.normal(-3, 1, 12), rs.normal(3, 1, 10), rs.normal(-3, 1, 8)])
    g = ["a"] * 12 + ["b"] * 10 + ["c"] * 8
    return validate_dataset(y, g)


@pytest.fixture(scope="session")
def small_scenario():
    spec = ScenarioSpec(
        J=6, n_per_group=60, dc_probs=(0.5, 0.5),
        archetypes=(Archetype((-4.0, 0.0), (1.0, 1.0), (0.5, 0.5)),
                    Archetype((0.0, 4.0), (1.0, 1.0), (0.5, 0.5))),
        seed=3,
    )
    return generate(spec)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
