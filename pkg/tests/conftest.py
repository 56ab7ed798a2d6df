import numpy as np
import pytest

from vislide.dynamics import BodyParams


@pytest.fixture
def body():
    return BodyParams(mass=4.0, inertia=np.diag([0.12, 0.15, 0.2]), r_com=np.zeros(3),
                      r_end=np.array([0.5, 0.0, 0.0]))


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


# acceptance outcomes, printed once at the end of the session
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE[number] = (bool(passed), detail)
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
