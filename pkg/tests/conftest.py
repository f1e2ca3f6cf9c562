import contextlib

import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance-criterion pass/fail line."""

    @contextlib.contextmanager
    def record(n, title):
        detail = {}
        try:
            yield detail
        except BaseException:
            _CRITERIA[n] = f"criterion {n} FAIL  {title}  {_fmt(detail)}"
            print(_CRITERIA[n])
            raise
        _CRITERIA[n] = f"criterion {n} PASS  {title}  {_fmt(detail)}"
        print(_CRITERIA[n])

    return record


def _fmt(detail):
    return " ".join(f"{k}={v}" for k, v in detail.items())


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
