import pytest

from moedrive.sim.rollout import generate_dataset, load_dataset
from moedrive.sim.world import ScenarioKind


@pytest.fixture(scope="session")
def small_dataset_dir(tmp_path_factory):
    """50 clips, 10 per scenario kind."""
    out = tmp_path_factory.mktemp("data") / "small"
    generate_dataset(out, {k: 10 for k in ScenarioKind}, seed=5)
    return out


@pytest.fixture(scope="session")
def small_dataset(small_dataset_dir):
    return load_dataset(small_dataset_dir)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
