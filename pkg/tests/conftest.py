import os
import shutil
from pathlib import Path

import pytest

from sizeloop.simulator import Simulator

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "src" / "sizeloop" / "fixtures"
SHIPPED_SIM = ROOT / "tools" / "ngspice-wasm" / "ngspice-wasm"
MODELS = ROOT / "tools" / "ngspice-wasm" / "models"


def _binary():
    for cand in (os.environ.get("EESIZER_NGSPICE"), str(SHIPPED_SIM), shutil.which("ngspice")):
        if cand and os.path.isfile(cand) and os.access(cand, os.X_OK):
            return cand
    return None


BINARY = _binary()


def pytest_collection_modifyitems(config, items):
    if BINARY and MODELS.is_dir():
        return
    skip = pytest.mark.skip(reason="simulator or PTM models not available")
    for item in items:
        if "requires_sim" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def model_dirs():
    return (str(MODELS),)


@pytest.fixture(scope="session")
def sim(model_dirs):
    return Simulator(BINARY, model_dirs=model_dirs)


@pytest.fixture
def fixtures():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
