import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lagmcf import FlowState, GridSpec, Preset, StepControl, make_preset, run  # noqa: E402

# acceptance lines collected by test_acceptance and echoed at the end of the session
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def torus_run():
    """Cosine amplitude 0.3 on a 128x128 torus, run to t = 20.

    The run stops once at t = 0.5 so that a sample lands exactly there.
    Returns ``(u0, final_state, series, seconds)``.
    """
    start = time.perf_counter()
    u0 = make_preset(Preset("cosine", {"amplitude": 0.3}), GridSpec.make((128, 128)))
    mid, series = run(FlowState(u0), StepControl(0.5, "rk2", 0.5, sample_every=250))
    final, tail = run(mid, StepControl(0.5, "rk2", 20.0, sample_every=250))
    for rec in tail.records[1:]:
        series.append(rec)
    return u0, final, series, time.perf_counter() - start


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
