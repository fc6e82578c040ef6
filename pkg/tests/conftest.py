import numpy as np
import pytest

from momentum_gtd.mdp import build_environment
from momentum_gtd.model import compute_model

ENV_NAMES = ("boyan14", "rw5", "rw19", "randmdp(0,20,5)")


@pytest.fixture(scope="session")
def envs():
    return {name: build_environment(name) for name in ENV_NAMES}


@pytest.fixture(scope="session")
def models(envs):
    return {name: compute_model(*env) for name, env in envs.items()}


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(n: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
