import json

import pytest


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(records, name="docs.jsonl"):
        path = tmp_path / name
        path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def write_text(tmp_path):
    def _write(text, name="file.txt"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion.

    The test calls ``verdict(number, detail)`` just before its final
    assertions; the line is marked FAIL if the test does not finish.
    """
    state = {}

    def _record(number, detail):
        state["line"] = (number, detail)

    yield _record
    if "line" in state:
        number, detail = state["line"]
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
