import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_moments(points, m):
    """Independent oracle: explicit double loop over (a, b) and points."""
    pts = np.asarray(points, dtype=float)
    out = []
    for k in range(1, m + 1):
        for b in range(k + 1):
            a = k - b
            out.append(sum(x**a * y**b for x, y in pts) / len(pts))
    return np.array(out)


AC_RESULTS = {}


def record_ac(tag, ok, detail):
    """Remember and print one acceptance line; the session summary repeats them in order."""
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    AC_RESULTS[tag] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if AC_RESULTS:
        terminalreporter.section("acceptance criteria")
        for tag in sorted(AC_RESULTS, key=lambda t: int(t.split("-")[1])):
            terminalreporter.write_line(AC_RESULTS[tag])
