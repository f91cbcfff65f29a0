import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("rfim", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rfim")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line: verdict(number, ok, text). Lines print in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number, ok, text):
        tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number:>2} {tag}  {text}" if isinstance(number, int) else f"{number:>12} {tag}  {text}"
        lines.append((number if isinstance(number, int) else int(str(number).split()[0]), len(lines), line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, _, line in sorted(lines):
            terminalreporter.write_line(line)
