"""Shared fixtures: the default experiment configuration and a single
session-scoped model fit (the campaign + fit takes a few seconds, so every
test that needs real fitted models shares one ModelSet).
"""

import pytest

from klmpc.harness import ExperimentConfig, fit_models

# filled by test_acceptance, printed after the run so the per-criterion
# verdicts are visible even with captured output
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def models(default_cfg):
    return fit_models(default_cfg)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
