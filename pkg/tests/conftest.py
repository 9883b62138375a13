import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402
from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def appendix_rewards():
    """Five rollouts whose IoU and accuracy rewards form the worked credit example."""
    return {"iou": [0.0, 0.5, 0.4, 0.8, 0.2], "acc": [1, 0, 1, 0, 1]}
