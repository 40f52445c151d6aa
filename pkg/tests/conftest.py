import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polykin.core import GasParams, make_rng
from polykin.models import ModelSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return make_rng(12345, 0)


@pytest.fixture
def model1():
    return ModelSpec("Model1", 2.0, GasParams())


def all_specs():
    out = []
    for model in ("Model1", "Model2", "Model3"):
        for g in (0.5, 1.0, 2.0):
            for a in (-0.5, 0.0, 1.0):
                out.append(ModelSpec(model, g, GasParams(alpha=a)))
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
