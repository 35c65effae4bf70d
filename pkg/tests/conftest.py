import time

import numpy as np
import pytest

from gda.csi_data import ConditionLabel, Vocab
from gda.diffusion import DiffusionConfig, train_diffusion
from gda.dsp import Spectrogram

TOY_CFG = DiffusionConfig(steps=50, train_steps=800, batch_size=16, lr=2e-3, base_channels=8, emb_dim=32, seed=42)


def half_bright_set(n=64, seed=0):
    """8x8 images: condition 0 bright on the left half, condition 1 on the right."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        g = i % 2
        img = np.zeros((8, 8))
        img[:, :4] = 1.0 if g == 0 else 0.0
        img[:, 4:] = 0.0 if g == 0 else 1.0
        img = np.clip(img * rng.uniform(0.7, 1.0) + rng.uniform(0, 0.1, (8, 8)), 0, 1)
        specs.append(Spectrogram(img, ConditionLabel(g)))
    return specs


def bright_side(pixels):
    return 0 if pixels[:, :4].sum() > pixels[:, 4:].sum() else 1


TIMINGS = {}
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def toy_diffusion():
    start = time.perf_counter()
    model, schedule, losses = train_diffusion(half_bright_set(), TOY_CFG, Vocab(gestures=2))
    TIMINGS["toy_train_s"] = time.perf_counter() - start
    return model, schedule, losses


@pytest.fixture
def verdict(request, capsys):
    """``verdict(n, ok, detail)`` records one acceptance line; a test that raises first is logged as FAIL."""
    said = []

    def emit(n, ok, detail):
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        said.append(line)
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    yield emit
    if not said:
        ACCEPTANCE_LINES.append(f"ACCEPTANCE {request.node.name}: FAIL  raised before a verdict")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
