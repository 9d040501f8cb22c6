import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240617)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts collected during the session."""
    import sys

    results = [r for name, mod in list(sys.modules.items())
               if name.endswith("test_acceptance") for r in getattr(mod, "RESULTS", [])]
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results):
            terminalreporter.write_line(line[1])
