import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def make_cand(score, cx, cy, w, h, emb=None):
    from cenet.decode import CharCandidate

    return CharCandidate(score, cx, cy, w, h, None if emb is None else np.asarray(emb, dtype=float))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ----------------------------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, [title, True, ""])
    if rep.failed:
        entry[1] = False
        entry[2] = str(rep.longrepr).strip().splitlines()[-1][:120] if rep.longrepr else ""
    detail = getattr(item, "criterion_detail", "")
    if detail:
        entry[2] = detail if entry[1] else f"{entry[2]} ({detail})"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)


@pytest.fixture
def report(request):
    """Attach a one-line measurement to the criterion summary."""

    def _set(text: str) -> None:
        request.node.criterion_detail = text

    return _set
