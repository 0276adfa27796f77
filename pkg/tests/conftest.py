import pytest

from ezag.harness import connected_world
from ezag.world import DEFAULT_DENSITY

_verdicts: list[str] = []


@pytest.fixture
def world_of():
    """Connected geo-dense world for (n, seed)."""

    def make(n, seed=0, density=DEFAULT_DENSITY):
        return connected_world(n, density, seed)

    return make


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance check, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
        _verdicts.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance")
        for line in sorted(_verdicts, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
