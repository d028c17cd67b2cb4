import numpy as np
import pytest

# Acceptance-criterion results collected by tests/test_acceptance.py; the
# terminal summary prints one pass/fail line per criterion.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record_criterion(name: str, passed: bool, detail: str = ""):
    ACCEPTANCE[name] = (bool(passed), detail)
    assert passed, f"{name}: {detail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[name]
        mark = "PASS" if passed else "FAIL"
        line = f"[{mark}] {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def grid32():
    from ktlab import Grid

    return Grid(d=2, N=32)


@pytest.fixture
def grid64():
    from ktlab import Grid

    return Grid(d=2, N=64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
