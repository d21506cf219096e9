import os

import pytest
from hypothesis import settings

from berrygrip.config import load_config

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def cfg_doc():
    return load_config()


@pytest.fixture(scope="session")
def cfg(cfg_doc):
    return cfg_doc[0]


@pytest.fixture(scope="session")
def doc(cfg_doc):
    return cfg_doc[1]


# acceptance lines collected by test_acceptance.py, echoed after the run
ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def acceptance(request):
    lines = request.config.stash[ACCEPTANCE_KEY]

    def emit(criterion: int, ok: bool, detail: str) -> bool:
        prev = lines.get(criterion)
        if prev is not None:
            ok = ok and prev[0]
            detail = f"{prev[1]}; {detail}"
        lines[criterion] = (ok, detail)
        print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        ok, detail = lines[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
