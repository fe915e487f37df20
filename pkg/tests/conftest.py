import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from prune2c.harness import HARNESS_DIR_ENV, find_template_dir  # noqa: E402
from prune2c.hostcc import have_cc  # noqa: E402

# Feature flag: compile-dependent tests are skipped when no host C compiler
# is available or when PRUNE2C_SKIP_CC is set.
_skip_cc = os.environ.get("PRUNE2C_SKIP_CC") == "1" or not have_cc()

requires_cc = pytest.mark.skipif(
    _skip_cc, reason="host C compiler unavailable (or PRUNE2C_SKIP_CC=1)")


def _harness_available() -> bool:
    try:
        find_template_dir()
        return True
    except Exception:
        return False


requires_harness = pytest.mark.skipif(
    _skip_cc or not _harness_available(),
    reason=f"bench/conform templates not found (set {HARNESS_DIR_ENV})")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One PASS/FAIL/SKIP line per acceptance criterion, written through the
    terminal reporter so it survives output capture."""
    outcome = yield
    report = outcome.get_result()
    name = getattr(getattr(item, "function", None), "acceptance_criterion", None)
    if not name:
        return
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is None:
        return
    if report.when == "call":
        tr.write_line(f"[ACCEPTANCE] {name}: {'PASS' if report.passed else 'FAIL'}")
    elif report.when == "setup" and report.skipped:
        tr.write_line(f"[ACCEPTANCE] {name}: SKIP ({report.longrepr[2]})")
