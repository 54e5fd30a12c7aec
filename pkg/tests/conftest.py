import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nscopt.fields import Grid, random_field

settings.register_profile(
    "nscopt", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nscopt")


@pytest.fixture(scope="session")
def grid2():
    return Grid(2, 16)


@pytest.fixture(scope="session")
def grid3():
    return Grid(3, 8)


def rand(grid, seed, **kw):
    return random_field(grid, seed=seed, **kw)


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


class ScenarioRuns:
    """Runs each shipped scenario through the CLI once per session."""

    def __init__(self, base):
        self.base = base
        self.cache = {}

    def __call__(self, name):
        if name not in self.cache:
            from nscopt.cli import main

            out = self.base / name
            code = main(["run", "--config", name, "--out", str(out)])
            self.cache[name] = (code, out)
        return self.cache[name]


@pytest.fixture(scope="session")
def scenario_run(tmp_path_factory):
    return ScenarioRuns(tmp_path_factory.mktemp("scenarios"))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report_criterion():
    """Record one acceptance line; ``checks`` is a list of
    ``(label, value, tolerance, passed)``."""

    def record(number, title, checks):
        ok = all(c[3] for c in checks)
        detail = "; ".join(f"{label} {value:.3g} (tol {tol:.3g})" for label, value, tol, _ in checks)
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
