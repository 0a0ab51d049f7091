import numpy as np
import pytest


@pytest.fixture
def rs():
    return np.random.default_rng(20240611)


def random_orthogonal(rs, n):
    q, r = np.linalg.qr(rs.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


ACCEPTANCE_LINES = []


def report(name, ok, detail):
    """Record and print one acceptance verdict line."""
    line = "%s %s %s" % (name, "PASS" if ok else "FAIL", detail)
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
