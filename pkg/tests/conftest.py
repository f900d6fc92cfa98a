import os
import shlex
import shutil

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def _solver_available() -> bool:
    cmd = os.environ.get("OOP_SOLVER_CMD")
    exe = shlex.split(cmd)[0] if cmd else "z3"
    return shutil.which(exe) is not None


requires_solver = pytest.mark.skipif(not _solver_available(), reason="z3 executable not on PATH")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
