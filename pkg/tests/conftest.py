import os
import sys

import hypothesis
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

hypothesis.settings.register_profile("default", deadline=None, max_examples=100)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=10)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> {"title", "outcomes": [(nodeid, passed)], "details": [str]}
_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


def _entry(marker):
    num, title = marker.args
    return _ACCEPTANCE.setdefault(num, {"title": title, "outcomes": [], "details": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _entry(marker)["outcomes"].append((item.nodeid, rep.passed))


@pytest.fixture
def acceptance_note(request):
    """Attach a measured value to the criterion's summary line."""
    marker = request.node.get_closest_marker("acceptance")

    def note(text):
        if marker is not None:
            _entry(marker)["details"].append(text)
        print(text)

    return note


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[num]
        ok = bool(e["outcomes"]) and all(p for _, p in e["outcomes"])
        detail = "; ".join(e["details"])
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {e['title']}" + (f" ({detail})" if detail else ""))
