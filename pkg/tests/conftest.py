import pytest
from hypothesis import settings

from pegcontact.geometry import make_geometry

settings.register_profile("pkg", deadline=None)
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def square():
    return make_geometry("square", 0.050, 0.001, 0.040, 0.060)


@pytest.fixture(scope="session")
def pentagon():
    return make_geometry("pentagon", 0.037, 0.001, 0.040, 0.060)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    """Print and record one PASS/FAIL line, then assert it."""
    def emit(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        request.config.acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
