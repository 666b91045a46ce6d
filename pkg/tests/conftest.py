import shutil
from pathlib import Path

import pytest

from anycensus.netsim import default_vps, generate_world

DATA = Path(__file__).resolve().parents[1] / "src" / "anycensus" / "data"
DEMO = DATA / "demo"


@pytest.fixture
def vps():
    return {vp.worker_id: vp for vp in default_vps()}


@pytest.fixture
def small_world():
    return generate_world(11, vps=default_vps(6), n_unicast=40, n_anycast=10, n_unresponsive=3, jitter_ms=0.5)


def copy_demo(root: Path) -> Path:
    """A writable copy of the bundled demo census under ``root``."""
    target = root / "demo"
    shutil.copytree(DEMO, target)
    shutil.copy(DATA / "cities500.tsv", root / "cities500.tsv")
    return target


@pytest.fixture
def demo_dir(tmp_path):
    return copy_demo(tmp_path)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
