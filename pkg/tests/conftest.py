import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def params():
    from nvtherm.spin_core import NvParameters
    return NvParameters()


@pytest.fixture(scope="session")
def tf_sensor(params):
    from nvtherm import thermometry as th
    return th.prepare_sensor(params, th.tf_regime())


@pytest.fixture(scope="session")
def shfd_sensor(params):
    from nvtherm import thermometry as th
    return th.prepare_sensor(params, th.shfd_regime())


_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome, then assert it."""
    def record(number: int, title: str, passed: bool, detail: str):
        _ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}")
        assert passed, f"[{number}] {title}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{n:>2}] {title}: {detail}")
