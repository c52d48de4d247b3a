"""Make render.py importable and build shared trace fixtures via the CLI."""
from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

PLOTS_DIR = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PLOTS_DIR))

STUDY_CONFIG = PLOTS_DIR.parent / "experiments" / "load_study.cfg"
BASELINE_CONFIG = PLOTS_DIR.parent / "experiments" / "eth_baseline.cfg"


def simulate(config: Path, out_dir: Path, blocks: int) -> Path:
    """Produce a trace through the simulator's public CLI."""
    cmd = [
        sys.executable, "-m", "tiersim.cli", "simulate",
        "--config", str(config), "--out", str(out_dir),
        "--blocks", str(blocks), "--quiet",
    ]
    subprocess.run(cmd, check=True)
    return out_dir / "trace.csv"


@pytest.fixture(scope="session")
def study_trace(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("study")
    return simulate(STUDY_CONFIG, out, blocks=400)


@pytest.fixture(scope="session")
def baseline_trace(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("baseline")
    return simulate(BASELINE_CONFIG, out, blocks=400)
