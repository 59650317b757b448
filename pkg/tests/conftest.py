import sys
from pathlib import Path

from hypothesis import settings

# lets test modules import the shared oracles
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")

import pytest

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def smoke(tmp_path_factory):
    """Short simulated lidar teach and offset repeat, run once per session through the Python API."""
    from topoloc import evaluation
    from topoloc.config import load_config
    from topoloc.pipeline import run_repeat, run_teach
    from topoloc.scenario import load_scenario, simulate_scenario

    base = tmp_path_factory.mktemp("smoke")
    scans = base / "scans"
    gt_path = simulate_scenario(load_scenario(ROOT / "scenarios" / "smoke.yaml"), scans)
    cfg = load_config(ROOT / "configs" / "lidar-lidar.yaml")
    gt = evaluation.read_ground_truth(gt_path)
    run_teach(cfg, scans / "teach" / "lidar", base / "teach")
    run_repeat(cfg, base / "teach", scans / "repeat" / "lidar", base / "repeat", gt=gt.__getitem__)
    return {"base": base, "scans": scans, "gt": gt_path, "teach": base / "teach", "repeat": base / "repeat",
            "config": ROOT / "configs" / "lidar-lidar.yaml"}
