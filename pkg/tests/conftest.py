import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from pipsus.config import TrackerConfig  # noqa: E402

TINY = TrackerConfig(K=2, R=3, L=2, embed_dim=24, encoder_stride=4, feature_dim=8, encoder_width=8,
                     image_size=(64, 64), hidden_dim=16, num_blocks=1)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def randomize_head(model, scale=0.05, seed=0):
    """Give the zero-initialised update head random weights."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        model.update.head.weight.copy_(torch.randn(model.update.head.weight.shape, generator=g) * scale)
        model.update.head.bias.copy_(torch.randn(2, generator=g) * scale)
    return model


# ---------------------------------------------------------------------------
# One PASS/FAIL line per acceptance criterion

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        _ACCEPTANCE[(n, item.nodeid)] = line
        tr = item.config.pluginmanager.get_plugin("terminalreporter")
        if tr is not None:
            tr.write_line("\n" + line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[key])
