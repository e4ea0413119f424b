import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=10, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def kinect():
    from mvprop.geometry import Intrinsics
    return Intrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Usage: ``with criterion(3, "mean shift vs oracle") as note: ...; note("detail")``.
    """
    import contextlib
    import time

    lines = request.config._acceptance_lines

    @contextlib.contextmanager
    def record(number, title):
        details = []
        t0 = time.perf_counter()
        ok = False
        try:
            yield details.append
            ok = True
        finally:
            dt = time.perf_counter() - t0
            extra = "; ".join(details)
            line = f"[{number:2d}] {'PASS' if ok else 'FAIL'}  {title} ({dt:.1f} s){': ' + extra if extra else ''}"
            lines.append(line)
            print(line)
    return record
