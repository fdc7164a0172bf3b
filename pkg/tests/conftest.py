import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))
sys.setrecursionlimit(20_000)

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def acceptance_note(request):
    """Attach a one-line measurement to the current criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def note(text: str) -> None:
        if marker is not None:
            _ACCEPTANCE.setdefault(marker.args[0], {"title": marker.args[1]})["note"] = text

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    entry = _ACCEPTANCE.setdefault(marker.args[0], {"title": marker.args[1]})
    entry.setdefault("results", []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[num]
        results = e.get("results", [])
        status = "PASS" if results and all(results) else "FAIL"
        note = f" ({e['note']})" if e.get("note") else ""
        tr.write_line(f"ACCEPTANCE {num}: {status} - {e['title']}{note}")
