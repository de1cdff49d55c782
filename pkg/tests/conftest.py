import json
import os
import time
from pathlib import Path

import pytest

from collabseg.config import load_config
from collabseg.runner import RECORD, Runner

# A phantom experiment small enough to run every stage in a few seconds.
TINY = {
    "seed": 7,
    "folds": 2,
    "output_dir": "out",
    "data": {
        "input_size": [16, 16],
        "phantom": {
            "count": 4,
            "shape": [24, 24, 5],
            "radius_range": [5.0, 8.0],
            "min_radius": 3.0,
            "distractor_radius_range": [2.0, 3.0],
        },
    },
    "unet": {"base_channels": 2, "depth": 2},
    "reg": {"base_channels": 2, "depth": 2, "epochs": 1},
    "optim": {"base_lr": 0.001},
    "semi": {"warmup_epochs": 1, "total_epochs": 2},
    "final": {"epochs": 1},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="session")
def phantom_run(tmp_path_factory):
    """One fold of the desk profile on the default phantom, shared by the slow tests.

    Returns ``(runner, evaluation summary, wall seconds, recorded stage seconds)``.
    """
    root = os.environ.get("COLLABSEG_ACCEPTANCE_ROOT") or tmp_path_factory.mktemp("phantom")
    runner = Runner(load_config("desk"), root, argv=["acceptance"])
    started = time.perf_counter()
    runner.synth()
    summary = runner.run_fold(0)["metrics"]
    wall = time.perf_counter() - started
    recorded = sum(json.loads(p.read_text())["elapsed_seconds"] for p in Path(root).rglob(RECORD))
    return runner, summary, wall, recorded
