from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from parahtr import tensor as T  # noqa: E402


@pytest.fixture(autouse=True)
def _float64_default():
    # pipeline stages switch the default dtype to the run's; isolate tests from that
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(np.float64)


# ---------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if kind is None:
            verdict, detail = "PASS", self.detail
        else:
            verdict = "FAIL"
            detail = self.detail or f"{kind.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        _ACCEPTANCE[self.number] = (self.title, verdict, detail)
        return False  # never swallow the failure


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c: ...``; set ``c.detail`` for the summary line."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, verdict, detail = _ACCEPTANCE[n]
        tr.write_line(f"[{verdict}] {n:2d}. {title}" + (f" ({detail})" if detail else ""))
