import pytest

from heatmass.state import state_from_modes

STANDARD_MODES = [(1, 1.0), (2, 0.5), (3, 0.25)]

# criterion number -> (ok, detail), filled by test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[number] = (ok, detail)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(params=["dirichlet", "neumann"])
def case(request):
    return request.param


@pytest.fixture
def standard_state():
    def make(case, mesh_n=256):
        return state_from_modes(case, STANDARD_MODES, mesh_n)
    return make
