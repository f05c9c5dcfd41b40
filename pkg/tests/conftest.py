import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("envvc", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "envvc"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


# ----------------------------------------------------------- acceptance log

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict: ``with criterion(3, "guidance algebra") as note: ...``."""
    import contextlib
    import time

    @contextlib.contextmanager
    def record(number, title):
        notes = []
        t0 = time.time()
        try:
            yield notes.append
        except BaseException as exc:
            detail = "; ".join(notes + [f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"])
            ACCEPTANCE[number] = f"criterion {number:>2} FAIL  {title} ({time.time() - t0:.1f}s) {detail}"
            print(ACCEPTANCE[number])
            raise
        ACCEPTANCE[number] = f"criterion {number:>2} PASS  {title} ({time.time() - t0:.1f}s) {'; '.join(notes)}"
        print(ACCEPTANCE[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
