import re
from collections import defaultdict

import numpy as np
import pytest

from mpemba.model import IonParams, ion_liouvillian
from mpemba.spectral import decompose

_CRITERION = re.compile(r"test_(A\d+)_")
_outcomes = defaultdict(list)
_notes = defaultdict(list)


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[m.group(1)].append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_outcomes, key=lambda k: int(k[1:])):
        results = _outcomes[key]
        ok = all(o == "passed" for _, o in results)
        detail = ", ".join(f"{name}={o}" for name, o in results if o != "passed")
        tr.write_line(f"{key}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else ""))
        for line in _notes.get(key, []):
            tr.write_line(f"    {line}")


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary of this test's criterion."""
    m = _CRITERION.search(request.node.name)
    key = m.group(1) if m else request.node.name

    def _note(msg):
        _notes[key].append(msg)

    return _note


@pytest.fixture(scope="session")
def ion_spec():
    return decompose(ion_liouvillian(IonParams()))


@pytest.fixture(scope="session")
def literal_spec():
    return decompose(ion_liouvillian(IonParams().with_convention("literal-rate")))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
