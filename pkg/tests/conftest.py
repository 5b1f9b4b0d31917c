import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _single_thread(monkeypatch):
    # tests that want threads set them explicitly
    monkeypatch.delenv("UGCP_NUM_THREADS", raising=False)
    monkeypatch.delenv("UGCP_BACKEND", raising=False)


# --- acceptance summary: one line per criterion ---------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = item.config._criteria.setdefault(n, {"title": title, "ok": True, "notes": []})
    if rep.failed or (rep.when == "setup" and rep.skipped):
        entry["ok"] = False
    for name, value in getattr(item, "user_properties", []):
        if name == "detail" and value not in entry["notes"]:
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        e = crit[n]
        line = f"criterion {n:>2} [{'PASS' if e['ok'] else 'FAIL'}] {e['title']}"
        if e["notes"]:
            line += " | " + "; ".join(e["notes"])
        terminalreporter.write_line(line)
