import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gflid.dataset import build_dataset  # noqa: E402
from gflid.params import ModelParams  # noqa: E402
from gflid.simulate import run_protocol  # noqa: E402


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def protocol_traj(params):
    return run_protocol(params)


@pytest.fixture(scope="session")
def protocol_ds(protocol_traj, params):
    return build_dataset(protocol_traj, "exact", 10, params.gains())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS: dict = {}
CRITERIA = {
    1: "model fidelity",
    2: "stability gate",
    3: "integrator order",
    4: "SINDy exact recovery",
    5: "STLSQ baseline equality",
    6: "DSR sanity targets",
    7: "policy-gradient correctness",
    8: "qualitative findings",
    9: "determinism",
}


@pytest.fixture
def verdict():
    """Record the outcome of an acceptance criterion, then assert it."""
    def record(n, ok, detail):
        VERDICTS[n] = (bool(ok), detail)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        ok, detail = VERDICTS.get(n, (False, "did not run to completion"))
        terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}: {detail}")
