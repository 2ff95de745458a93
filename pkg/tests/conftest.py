import pytest

# a fit small enough to run in about a second
TINY = {
    "image_size": 8,
    "base_resolution": 8,
    "channels": 2,
    "n_samples": 8,
    "novel_size": 8,
    "extractor_levels": 3,
    "extractor_channels": 2,
    "eval_poses": 2,
    "report_every": 5,
    "schedule": {"num_iter": 12},
}


@pytest.fixture
def tiny_config():
    return {**TINY, "schedule": dict(TINY["schedule"])}
