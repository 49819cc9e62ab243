"""Shared fixtures plus a terminal summary for the acceptance suite."""

import pytest

from dice.pipeline import make_synthetic_fixture

# test_acceptance.py records one (criterion, passed, detail) row per check
ACCEPTANCE_LOG: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_LOG.append((name, passed, detail))


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    """8-image dataset: enough for pipeline plumbing tests."""
    root = tmp_path_factory.mktemp("fixture_small")
    return make_synthetic_fixture(root, n_images=8, seed=3)


@pytest.fixture(scope="session")
def ablation_fixture(tmp_path_factory):
    """64-image dataset used by the mode-ordering acceptance check."""
    root = tmp_path_factory.mktemp("fixture_ablation")
    return make_synthetic_fixture(root, n_images=64, seed=3)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LOG:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LOG:
        status = "PASS" if passed else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        tr.write_line(line, green=passed, red=not passed)
