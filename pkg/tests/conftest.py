"""Shared fixtures and the acceptance-report hook.

Unit tests use cheap schemes (small threshold sample counts or pinned
thresholds); only the acceptance suite runs at its stated budgets. The
acceptance tests register one line each, printed as a summary section at
the end of the run.
"""

import numpy as np
import pytest

from lplsh import Knobs, derive_params
from lplsh.util import derive_rng

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return derive_rng(0, 9000)


def cheap_scheme(
    c=2.0,
    p=1.5,
    r=1.0,
    t=3,
    w=None,
    delta=3.0,
    delta_fail=1e-3,
    threshold=None,
    profile="remark",
    kappa_w=1.8,
    u=None,
):
    """Desk-scale scheme for unit tests: small t, small U, fast threshold.

    With threshold=None the threshold still comes from Monte Carlo but at
    the 10^4-sample floor; pass an explicit value to pin it outright.
    """
    overrides = {"t": float(t), "delta": float(delta), "delta_fail": float(delta_fail)}
    if w is not None:
        overrides["w"] = float(w)
    if threshold is not None:
        overrides["threshold"] = float(threshold)
    if u is not None:
        overrides["u"] = float(u)
    return derive_params(
        c,
        p,
        profile=profile,
        knobs=Knobs(kappa_w=kappa_w),
        overrides=overrides,
        r=r,
        threshold_samples=10_000,
    )


def three_sigma(p_hat: float, trials: int) -> float:
    return 3.0 * np.sqrt(max(p_hat * (1.0 - p_hat), 1.0 / trials) / trials)
