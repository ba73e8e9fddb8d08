import time
from contextlib import contextmanager

import pytest

_RESULTS: list[tuple[str, bool, float, str]] = []


class Recorder:
    @contextmanager
    def criterion(self, name: str, budget_s: float):
        t0 = time.perf_counter()
        detail = {"text": ""}
        try:
            yield detail
        except BaseException:
            _RESULTS.append((name, False, time.perf_counter() - t0, detail["text"]))
            raise
        elapsed = time.perf_counter() - t0
        ok = elapsed <= budget_s
        note = detail["text"] + ("" if ok else f" (over budget {budget_s:g}s)")
        _RESULTS.append((name, ok, elapsed, note))
        assert ok, f"{name} took {elapsed:.1f}s, budget {budget_s:g}s"


@pytest.fixture(scope="session")
def acceptance():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, elapsed, note in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name:32s} {elapsed:7.2f}s  {note}".rstrip())
