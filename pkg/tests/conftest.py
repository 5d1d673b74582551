"""Shared test helpers: finite-difference oracles and the acceptance summary."""
import numpy as np
import pytest


def central_difference(f, array, h=1e-5):
    """Central finite differences of scalar f w.r.t. every element of array.

    f is called with no arguments and must read the (mutated) array; the
    array is restored before returning.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        up = f()
        flat[i] = original - h
        down = f()
        flat[i] = original
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-6):
    """Elementwise |a - b| / max(|a|, |b|, floor).

    The floor keeps finite-difference cancellation noise on near-zero
    gradients from registering as spurious relative error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def max_relative_error(a, b, floor=1e-6):
    return float(relative_error(a, b, floor).max())


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion" not in nodeid:
                continue
            if getattr(report, "when", "call") != "call" and outcome == "passed":
                continue
            name = nodeid.split("::")[-1].replace("test_criterion_", "")
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((name, status))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in sorted(set(lines)):
            terminalreporter.write_line(f"criterion {name}: {status}")
