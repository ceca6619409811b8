import numpy as np
import pytest
import torch
from skimage import data, transform

from tiergan.losses import LossWeights
from tiergan.models import make_plan
from tiergan.priors import BroadcastBackend, MockExtractor
from tiergan.training import PriorConfig, StageConfig, StructuralConfig, TrainConfig, train_pipeline


def photo(size=(64, 64), name="astronaut"):
    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    img = transform.resize(img, size, anti_aliasing=True)
    return (img * 2 - 1).astype(np.float32)


@pytest.fixture(scope="session")
def astronaut64():
    return photo((64, 64))


def tiny_config(epochs=20, structural_epochs=20, seed=0):
    return TrainConfig(structural=StructuralConfig(epochs=structural_epochs, batch=16),
                       stage=StageConfig(epochs=epochs), d_steps=1, g_steps=1, seed=seed)


TINY_PRIOR = PriorConfig(stddevs=(0.1, 0.3, 0.5), per_stddev=4, copies=4, invert_steps=50)
TINY_MODEL = {"channels": 8}


def train_tiny(image, plan="St1Se1Te1", cfg=None, **kw):
    kw.setdefault("backend", BroadcastBackend((3, 4, 4), (32, 32)))
    kw.setdefault("extractor", MockExtractor())
    kw.setdefault("prior", TINY_PRIOR)
    kw.setdefault("model_kwargs", TINY_MODEL)
    return train_pipeline(image, plan, cfg or tiny_config(), **kw)


@pytest.fixture(scope="session")
def tiny_model(astronaut64):
    torch.manual_seed(0)
    return train_tiny(astronaut64)


# --- acceptance log ---------------------------------------------------------

ACCEPTANCE = []


class criterion:
    """Record one PASS/FAIL line for an acceptance criterion."""

    def __init__(self, number, title):
        self.label = f"[{number}] {title}"
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"{status} {self.label}" + (f" ({self.detail})" if self.detail else "")
        ACCEPTANCE.append(line)
        print(line)
        return False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
