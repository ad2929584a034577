import os

# single-threaded BLAS keeps the timed acceptance runs honest and reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""
    def record(name, ok, detail):
        ACCEPTANCE_LINES[name] = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[name])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for name in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[name])
