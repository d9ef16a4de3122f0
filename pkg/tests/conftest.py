"""Collects acceptance outcomes and prints one line per criterion at the end."""

import pytest

_RESULTS = {}  # criterion -> list of (name, passed, note)


@pytest.fixture
def note(request):
    """Lets a test attach a short measurement to its criterion line."""
    notes = []
    request.node._criterion_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        notes = "; ".join(getattr(item, "_criterion_notes", []))
        _RESULTS.setdefault(mark.args[0], []).append((item.name, rep.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_RESULTS):
        rows = _RESULTS[crit]
        ok = all(passed for _, passed, _ in rows)
        failed = [name for name, passed, _ in rows if not passed]
        notes = [n for _, _, n in rows if n]
        detail = f"{len(rows) - len(failed)}/{len(rows)} tests passed"
        if notes:
            detail += "; " + " | ".join(notes)
        if failed:
            detail += "; failed: " + ", ".join(failed)
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  ({detail})")
