import numpy as np
import pytest

CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and (rep.when == "call" or rep.failed or rep.skipped):
        num, title = mark.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        results = item.config.stash[CRITERIA]
        if rep.when == "call" or num not in results:
            results[num] = (title, "PASS" if rep.passed else "FAIL", detail)
    return rep


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        title, status, detail = results[num]
        line = f"criterion {num:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
